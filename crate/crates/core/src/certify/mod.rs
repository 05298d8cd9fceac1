//! Hypothesis checks and global-optimality certifiers.
//!
//! A certifier never proves anything about the exact objective. It measures every
//! hypothesis of the corresponding theorem at the given point, with explicit
//! tolerances, and returns a [`CertificationReport`] listing each measurement. The
//! verdict is conjunctive: `certified_global_minimum` requires a small gradient and
//! every listed condition.

mod separability;

pub use separability::{
    check_separability, ClassOutcome, SeparabilityCertificate, SeparabilityConfig, SeparabilityMethod,
    SeparabilityStatus, Witness,
};

use crate::autodiff::{
    block_hessian, block_hessian_from_gradient, check_nondegenerate, norm2, BlockHessian, FdStep,
    NondegeneracyThreshold, TrainingProblem,
};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue_symmetric, numerical_rank, Matrix, RankTolerance};
use crate::losses::{LabeledDataset, Loss};
use crate::model::{forward, ForwardCache, NetworkParams};
use crate::io::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMethod {
    /// Second differences of the objective.
    ObjectiveDifferences,
    /// Central differences of the backpropagated gradient.
    GradientDifferences,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Critical-point threshold on `‖∇Φ‖₂`.
    pub eps_crit: f64,
    /// Allowed excess of `Φ` over the reference minimum.
    pub eps_phi: f64,
    pub rank_tol: RankTolerance,
    pub tau_nd: NondegeneracyThreshold,
    pub hessian_step: FdStep,
    pub hessian_method: HessianMethod,
    pub separability: SeparabilityConfig,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_crit: 1e-7,
            eps_phi: 1e-6,
            rank_tol: RankTolerance::Auto,
            tau_nd: NondegeneracyThreshold::default(),
            hessian_step: FdStep::hessian(),
            hessian_method: HessianMethod::GradientDifferences,
            separability: SeparabilityConfig::default(),
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("tolerance {name} must be positive, got {v}")))
            }
        };
        positive("eps_crit", self.eps_crit)?;
        positive("eps_phi", self.eps_phi)?;
        match self.rank_tol {
            RankTolerance::Absolute(t) => positive("rank_tol", t)?,
            RankTolerance::Auto => {}
        }
        match self.tau_nd {
            NondegeneracyThreshold::Absolute(t) | NondegeneracyThreshold::Relative(t) => positive("tau_nd", t)?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Linearly independent inputs, full column rank from layer 2.
    IndependentInputs,
    /// Wide layer `k` with a non-degenerate block over the layers in `I`.
    Main,
    /// Wide layer `k` at a non-degenerate local minimum.
    NondegenerateMinimum,
    /// Separable features at layer `k` under the separable loss.
    Separable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CertifiedGlobalMinimum,
    ConditionsNotMet,
    NotCritical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub satisfied: bool,
    pub value: Real,
    pub threshold: Real,
}

impl Condition {
    fn new(name: impl Into<String>, satisfied: bool, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            satisfied,
            value: Real(value),
            threshold: Real(threshold),
        }
    }
}

/// Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub theorem: Theorem,
    pub conditions: Vec<Condition>,
    pub grad_norm: Real,
    pub objective: Real,
    pub global_min_reference: Real,
    pub verdict: Verdict,
}

impl CertificationReport {
    fn assemble(
        theorem: Theorem,
        mut conditions: Vec<Condition>,
        grad_norm: f64,
        eps_crit: f64,
        objective: f64,
        reference: f64,
    ) -> Self {
        let critical = grad_norm <= eps_crit;
        conditions.insert(0, Condition::new("critical_point", critical, grad_norm, eps_crit));
        let verdict = if !critical {
            Verdict::NotCritical
        } else if conditions.iter().all(|c| c.satisfied) {
            Verdict::CertifiedGlobalMinimum
        } else {
            Verdict::ConditionsNotMet
        };
        Self {
            theorem,
            conditions,
            grad_norm: Real(grad_norm),
            objective: Real(objective),
            global_min_reference: Real(reference),
            verdict,
        }
    }

    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::CertifiedGlobalMinimum
    }

    /// `Φ − Φ*`
    pub fn objective_gap(&self) -> f64 {
        self.objective.0 - self.global_min_reference.0
    }

    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn failed_conditions(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.satisfied)
    }

    pub fn to_json(&self) -> String {
        crate::io::to_json(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankVerdict {
    pub full: bool,
    pub rank: usize,
    pub required: usize,
}

/// `rank([X, 1_N]) = N`
pub fn check_linear_independence(x: &Matrix, tol: RankTolerance) -> RankVerdict {
    let rank = numerical_rank(&x.append_ones_column(), tol);
    RankVerdict {
        full: rank == x.rows(),
        rank,
        required: x.rows(),
    }
}

/// `rank([F_k, 1_N]) = N`; `k = 0` refers to the input matrix.
pub fn check_feature_rank(cache: &ForwardCache, k: usize, tol: RankTolerance) -> Result<RankVerdict> {
    if k >= cache.depth() {
        return Err(Error::invalid(format!(
            "feature layer {k} outside [0, {}]",
            cache.depth() - 1
        )));
    }
    Ok(check_linear_independence(cache.f(k), tol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRank {
    pub layer: usize,
    pub rank: usize,
    pub width: usize,
    pub full: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRankCheck {
    pub layers: Vec<LayerRank>,
    /// `n_{from−1} ≥ n_from ≥ … ≥ n_L`
    pub pyramidal: bool,
}

impl ColumnRankCheck {
    pub fn all_full(&self) -> bool {
        self.layers.iter().all(|l| l.full)
    }
}

/// `rank(W_l) = n_l` for `l = from_layer..=L`. `from_layer = L + 1` gives the empty check.
pub fn check_column_ranks(params: &NetworkParams, from_layer: usize, tol: RankTolerance) -> Result<ColumnRankCheck> {
    let depth = params.depth();
    if from_layer < 2 || from_layer > depth + 1 {
        return Err(Error::invalid(format!(
            "column-rank check must start in [2, {}], got {from_layer}",
            depth + 1
        )));
    }
    let widths = &params.arch.widths;
    let pyramidal = widths[from_layer - 1..].windows(2).all(|w| w[0] >= w[1]);
    let layers = (from_layer..=depth)
        .map(|l| {
            let rank = numerical_rank(params.weight(l), tol);
            LayerRank {
                layer: l,
                rank,
                width: widths[l],
                full: rank == widths[l],
            }
        })
        .collect();
    Ok(ColumnRankCheck { layers, pyramidal })
}

fn column_rank_conditions(check: &ColumnRankCheck) -> Vec<Condition> {
    check
        .layers
        .iter()
        .map(|l| {
            Condition::new(
                format!("full_column_rank_w{}", l.layer),
                l.full,
                l.rank as f64,
                l.width as f64,
            )
        })
        .collect()
}

fn reference_minimum(loss: &Loss, data: &LabeledDataset) -> f64 {
    match loss {
        Loss::Regression { kind } => (data.len() * data.output_dim()) as f64 * kind.minimum_value(),
        Loss::Separable => 0.0,
    }
}

struct Evaluation {
    problem: TrainingProblem,
    flat: Vec<f64>,
    cache: ForwardCache,
    objective: f64,
    grad_norm: f64,
}

fn evaluate(params: &NetworkParams, data: &LabeledDataset, loss: &Loss) -> Result<Evaluation> {
    params.validate()?;
    if !params.activation().is_certifiable() {
        return Err(Error::invalid(format!(
            "{} activation is outside the certified setting",
            params.activation().name()
        )));
    }
    let problem = TrainingProblem::new(params.arch.clone(), data.clone(), *loss)?;
    let flat = crate::autodiff::ParamVector::from_params(params).flat;
    let (objective, grad) = problem.value_and_gradient(&flat)?;
    let cache = forward(params, data.x())?;
    Ok(Evaluation {
        problem,
        flat,
        cache,
        objective,
        grad_norm: norm2(&grad),
    })
}

fn require_regression(loss: &Loss) -> Result<()> {
    match loss {
        Loss::Regression { .. } => Ok(()),
        Loss::Separable => Err(Error::invalid(
            "this certifier applies to the regression objective, not the separable loss",
        )),
    }
}

/// Hessian of Φ restricted to `subset` at the evaluation point.
fn estimate_hessian(eval: &Evaluation, subset: &[usize], tol: &Tolerances) -> Result<BlockHessian> {
    match tol.hessian_method {
        HessianMethod::ObjectiveDifferences => {
            let f = |theta: &[f64]| eval.problem.objective(theta);
            block_hessian(&f, &eval.flat, subset, tol.hessian_step)
        }
        HessianMethod::GradientDifferences => {
            let g = |theta: &[f64]| eval.problem.gradient(theta);
            block_hessian_from_gradient(&g, &eval.flat, subset, tol.hessian_step)
        }
    }
}

fn hessian_reliability(h: &BlockHessian) -> Condition {
    Condition::new(
        "hessian_estimate_symmetric",
        h.reliable,
        h.asymmetry,
        1e-3 * (1.0 + h.matrix.frobenius_norm()),
    )
}

/// Linearly independent inputs and full column rank of `W_2..W_L`.
pub fn certify_independent_inputs(
    params: &NetworkParams,
    data: &LabeledDataset,
    loss: &Loss,
    tol: &Tolerances,
) -> Result<CertificationReport> {
    tol.validate()?;
    require_regression(loss)?;
    let eval = evaluate(params, data, loss)?;
    let independence = check_linear_independence(data.x(), tol.rank_tol);
    let mut conditions = vec![Condition::new(
        "inputs_linearly_independent",
        independence.full,
        independence.rank as f64,
        independence.required as f64,
    )];
    conditions.extend(column_rank_conditions(&check_column_ranks(params, 2, tol.rank_tol)?));
    Ok(CertificationReport::assemble(
        Theorem::IndependentInputs,
        conditions,
        eval.grad_norm,
        tol.eps_crit,
        eval.objective,
        reference_minimum(loss, data),
    ))
}

fn check_wide_layer(params: &NetworkParams, k: usize) -> Result<()> {
    let depth = params.depth();
    if k == 0 || k >= depth {
        return Err(Error::Precondition(format!(
            "wide layer k = {k} must lie in [1, {}]",
            depth.saturating_sub(1)
        )));
    }
    Ok(())
}

fn width_condition(params: &NetworkParams, data: &LabeledDataset, k: usize) -> Condition {
    let width = params.arch.width(k);
    let needed = data.len().saturating_sub(1);
    Condition::new(format!("wide_layer_n{k}"), width >= needed, width as f64, needed as f64)
}

/// Wide layer `k`, non-degenerate on the parameters of the layers in `subset`, full
/// column rank of `W_{k+2}..W_L`.
pub fn certify_main(
    params: &NetworkParams,
    data: &LabeledDataset,
    loss: &Loss,
    k: usize,
    subset: &[usize],
    tol: &Tolerances,
) -> Result<CertificationReport> {
    tol.validate()?;
    require_regression(loss)?;
    check_wide_layer(params, k)?;
    let depth = params.depth();
    if !subset.contains(&(k + 1)) {
        return Err(Error::Precondition(format!(
            "layer subset {subset:?} must contain k + 1 = {}",
            k + 1
        )));
    }
    if let Some(bad) = subset.iter().find(|l| **l <= k || **l > depth) {
        return Err(Error::Precondition(format!(
            "layer {bad} outside {{{}, …, {depth}}}",
            k + 1
        )));
    }
    let eval = evaluate(params, data, loss)?;
    let indices = eval.problem.layout().indices_for_layers(subset)?;
    let hessian = estimate_hessian(&eval, &indices, tol)?;
    let nd = check_nondegenerate(&hessian.matrix, tol.tau_nd)?;

    let mut conditions = vec![
        width_condition(params, data, k),
        Condition::new("nondegenerate_block_hessian", nd.nondegenerate, nd.margin, nd.threshold),
        hessian_reliability(&hessian),
    ];
    conditions.extend(column_rank_conditions(&check_column_ranks(params, k + 2, tol.rank_tol)?));
    Ok(CertificationReport::assemble(
        Theorem::Main,
        conditions,
        eval.grad_norm,
        tol.eps_crit,
        eval.objective,
        reference_minimum(loss, data),
    ))
}

/// Wide layer `k` at a local minimum whose full Hessian is positive definite, full column
/// rank of `W_{k+2}..W_L`. Positive definiteness passes to every principal block, so this
/// is the main certificate with the subset `{k+1, …, L}`.
pub fn certify_nondegenerate_minimum(
    params: &NetworkParams,
    data: &LabeledDataset,
    loss: &Loss,
    k: usize,
    tol: &Tolerances,
) -> Result<CertificationReport> {
    tol.validate()?;
    require_regression(loss)?;
    check_wide_layer(params, k)?;
    let eval = evaluate(params, data, loss)?;
    let all: Vec<usize> = (0..eval.flat.len()).collect();
    let hessian = estimate_hessian(&eval, &all, tol)?;
    let threshold = tol.tau_nd.resolve(&hessian.matrix);
    let lowest = min_eigenvalue_symmetric(&hessian.matrix)?;

    let mut conditions = vec![
        width_condition(params, data, k),
        Condition::new("positive_definite_hessian", lowest > threshold, lowest, threshold),
        hessian_reliability(&hessian),
    ];
    conditions.extend(column_rank_conditions(&check_column_ranks(params, k + 2, tol.rank_tol)?));
    Ok(CertificationReport::assemble(
        Theorem::NondegenerateMinimum,
        conditions,
        eval.grad_norm,
        tol.eps_crit,
        eval.objective,
        reference_minimum(loss, data),
    ))
}

/// Separable loss: features `F_k` linearly separable and full column rank of
/// `W_{k+2}..W_L`. `k = 0` checks the raw inputs.
pub fn certify_separable(
    params: &NetworkParams,
    data: &LabeledDataset,
    k: usize,
    tol: &Tolerances,
) -> Result<CertificationReport> {
    tol.validate()?;
    let classes = data
        .classes()
        .ok_or_else(|| Error::invalid("separability certificate requires class labels"))?;
    let depth = params.depth();
    if k >= depth {
        return Err(Error::Precondition(format!(
            "feature layer k = {k} must lie in [0, {}]",
            depth - 1
        )));
    }
    let eval = evaluate(params, data, &Loss::Separable)?;
    let cert = check_separability(eval.cache.f(k), classes, data.output_dim(), &tol.separability)?;
    let separable = cert.status == SeparabilityStatus::Separable;
    let value = if separable || cert.status == SeparabilityStatus::NotSeparable {
        cert.min_margin
    } else {
        0.0
    };
    let mut conditions = vec![Condition::new(
        format!("features_separable_f{k}"),
        separable,
        value,
        0.0,
    )];
    conditions.extend(column_rank_conditions(&check_column_ranks(params, k + 2, tol.rank_tol)?));
    Ok(CertificationReport::assemble(
        Theorem::Separable,
        conditions,
        eval.grad_norm,
        tol.eps_crit,
        eval.objective,
        0.0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::RegressionLossKind;
    use crate::model::{ActivationKind, Architecture};

    #[test]
    fn linear_independence_examples() {
        assert!(check_linear_independence(&Matrix::identity(3), RankTolerance::Auto).full);
        let dup = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(!check_linear_independence(&dup, RankTolerance::Auto).full);
        let tall = Matrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * (i * j) as f64);
        let v = check_linear_independence(&tall, RankTolerance::Auto);
        assert!(!v.full);
        assert!(v.rank <= 4);
    }

    #[test]
    fn column_rank_examples() {
        let arch = Architecture::new(vec![2, 3, 3, 3], ActivationKind::Sigmoid).unwrap();
        let mut p = NetworkParams::zeros(&arch);
        p.weights[1] = Matrix::identity(3);
        p.weights[2] = Matrix::identity(3);
        let check = check_column_ranks(&p, 2, RankTolerance::Auto).unwrap();
        assert!(check.all_full() && check.pyramidal);

        p.weights[2].set(1, 1, 0.0);
        let check = check_column_ranks(&p, 2, RankTolerance::Auto).unwrap();
        assert!(!check.all_full());
        assert!(!check.layers[1].full && check.layers[0].full);

        let wide = Architecture::new(vec![2, 3, 5], ActivationKind::Sigmoid).unwrap();
        let q = NetworkParams::zeros(&wide);
        let check = check_column_ranks(&q, 2, RankTolerance::Auto).unwrap();
        assert!(!check.pyramidal);
        assert!(!check.all_full());

        assert!(check_column_ranks(&q, 1, RankTolerance::Auto).is_err());
        assert!(check_column_ranks(&q, 3, RankTolerance::Auto).unwrap().layers.is_empty());
    }

    #[test]
    fn feature_rank_examples() {
        let arch = Architecture::new(vec![2, 3, 1], ActivationKind::Sigmoid).unwrap();
        let p = NetworkParams::zeros(&arch);
        let one = Matrix::from_rows(&[vec![0.3, 0.1]]).unwrap();
        assert!(check_feature_rank(&forward(&p, &one).unwrap(), 1, RankTolerance::Auto).unwrap().full);
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let cache = forward(&p, &x).unwrap();
        let v = check_feature_rank(&cache, 1, RankTolerance::Auto).unwrap();
        assert!(!v.full);
        assert_eq!(v.rank, 1);
        assert!(check_feature_rank(&cache, 2, RankTolerance::Auto).is_err());
    }

    #[test]
    fn main_certifier_rejects_subset_without_next_layer() {
        let arch = Architecture::new(vec![2, 8, 3, 1], ActivationKind::Sigmoid).unwrap();
        let p = NetworkParams::zeros(&arch);
        let x = Matrix::from_fn(6, 2, |i, j| (i as f64) * 0.5 - (j as f64) * 0.3 * i as f64);
        let data = LabeledDataset::regression(x, Matrix::from_fn(6, 1, |_, _| 0.5)).unwrap();
        let loss = Loss::regression(RegressionLossKind::Squared);
        let tol = Tolerances::default();
        assert!(matches!(
            certify_main(&p, &data, &loss, 1, &[3], &tol),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            certify_main(&p, &data, &loss, 1, &[1, 2], &tol),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            certify_main(&p, &data, &loss, 3, &[4], &tol),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn identity_activation_is_not_certifiable() {
        let arch = Architecture::new(vec![1, 1], ActivationKind::Identity).unwrap();
        let p = NetworkParams::zeros(&arch);
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let data = LabeledDataset::regression(x, Matrix::zeros(2, 1)).unwrap();
        let loss = Loss::regression(RegressionLossKind::Squared);
        assert!(certify_independent_inputs(&p, &data, &loss, &Tolerances::default()).is_err());
    }

    #[test]
    fn report_json_has_stable_key_order() {
        let report = CertificationReport::assemble(
            Theorem::Main,
            vec![Condition::new("c", true, 1.0, 0.5)],
            1e-9,
            1e-7,
            0.25,
            0.0,
        );
        let json = report.to_json();
        let keys = ["\"theorem\"", "\"conditions\"", "\"grad_norm\"", "\"objective\"", "\"global_min_reference\"", "\"verdict\""];
        let positions: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(json.contains("1.0000000000000001e-9") || json.contains("1.0000000000000000e-9"));
        assert!(json.contains("\"certified_global_minimum\""));
        let back: CertificationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn not_critical_dominates_failed_conditions() {
        let report = CertificationReport::assemble(
            Theorem::IndependentInputs,
            vec![Condition::new("c", false, 0.0, 1.0)],
            1.0,
            1e-7,
            0.3,
            0.0,
        );
        assert_eq!(report.verdict, Verdict::NotCritical);
        let report = CertificationReport::assemble(
            Theorem::IndependentInputs,
            vec![Condition::new("c", false, 0.0, 1.0)],
            1e-9,
            1e-7,
            0.3,
            0.0,
        );
        assert_eq!(report.verdict, Verdict::ConditionsNotMet);
    }
}
