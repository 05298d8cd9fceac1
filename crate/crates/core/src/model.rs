//! Network architecture, activations and the forward pass.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Analytic, strictly increasing activation kinds.
///
/// `Identity` is only meant for the linear rank-bound check; certifiers and the
/// wide-layer construction refuse it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Softplus { alpha: f64 },
    Identity,
}

/// Logistic function with a branch split at zero so neither side overflows.
#[inline]
pub(crate) fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic derivative `e^{-|t|} / (1 + e^{-|t|})^2`, accurate in both tails.
#[inline]
fn logistic_derivative(t: f64) -> f64 {
    let e = (-t.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

impl ActivationKind {
    pub fn softplus(alpha: f64) -> Result<Self> {
        let kind = ActivationKind::Softplus { alpha };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::Softplus { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::invalid(format!("softplus requires alpha > 0, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Softplus { .. } => "softplus",
            ActivationKind::Identity => "identity",
        }
    }

    /// Kinds covered by the global-optimality theorems.
    pub fn is_certifiable(&self) -> bool {
        !matches!(self, ActivationKind::Identity)
    }

    /// Range bounds `(μ, γ)` for bounded kinds.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            ActivationKind::Sigmoid => Some((0.0, 1.0)),
            ActivationKind::Tanh => Some((-1.0, 1.0)),
            ActivationKind::Softplus { .. } | ActivationKind::Identity => None,
        }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ActivationKind::Sigmoid => logistic(t),
            ActivationKind::Tanh => t.tanh(),
            ActivationKind::Softplus { alpha } => {
                let at = alpha * t;
                // log(1 + e^{at}) = max(at, 0) + log1p(e^{-|at|})
                (at.max(0.0) + (-at.abs()).exp().ln_1p()) / alpha
            }
            ActivationKind::Identity => t,
        }
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            ActivationKind::Sigmoid => logistic_derivative(t),
            ActivationKind::Tanh => {
                // sech²(t) = 4 e^{-2|t|} / (1 + e^{-2|t|})²
                4.0 * logistic_derivative(2.0 * t)
            }
            ActivationKind::Softplus { alpha } => logistic(alpha * t),
            ActivationKind::Identity => 1.0,
        }
    }

    pub fn eval(&self, t: f64) -> (f64, f64) {
        (self.value(t), self.derivative(t))
    }

    /// `(σ(t) − μ, γ − σ(t))` computed without cancellation, for bounded kinds.
    fn range_gaps(&self, t: f64) -> Option<(f64, f64)> {
        match self {
            ActivationKind::Sigmoid => Some((logistic(t), logistic(-t))),
            ActivationKind::Tanh => Some((2.0 * logistic(2.0 * t), 2.0 * logistic(-2.0 * t))),
            _ => None,
        }
    }
}

/// `(σ(t), σ'(t))`
pub fn activation_eval(kind: ActivationKind, t: f64) -> (f64, f64) {
    kind.eval(t)
}

/// Layer widths `[n_0, …, n_L]` with one activation for every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, activation: ActivationKind) -> Result<Self> {
        let arch = Self { widths, activation };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::invalid(
                "architecture needs at least an input and an output width",
            ));
        }
        if let Some(pos) = self.widths.iter().position(|w| *w == 0) {
            return Err(Error::invalid(format!("width n_{pos} is zero")));
        }
        self.activation.validate()
    }

    /// Number of layers L.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// `n_k`, with `k = 0` the input dimension.
    pub fn width(&self, k: usize) -> usize {
        self.widths[k]
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// Weights `W_k` (`n_{k-1} x n_k`) and biases `b_k` for `k = 1..=L`, stored 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl NetworkParams {
    pub fn new(arch: Architecture, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self {
            arch,
            weights,
            biases,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let weights = arch
            .widths
            .windows(2)
            .map(|w| Matrix::zeros(w[0], w[1]))
            .collect();
        let biases = arch.widths[1..].iter().map(|n| vec![0.0; *n]).collect();
        Self {
            arch: arch.clone(),
            weights,
            biases,
        }
    }

    /// i.i.d. normal weights scaled by `init_scale / sqrt(fan_in)`, zero biases.
    pub fn random_init<R: Rng + ?Sized>(arch: &Architecture, init_scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for w in p.weights.iter_mut() {
            let scale = init_scale / (w.rows() as f64).sqrt();
            for v in w.as_mut_slice() {
                let z: f64 = rng.sample(StandardNormal);
                *v = scale * z;
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let depth = self.arch.depth();
        if self.weights.len() != depth || self.biases.len() != depth {
            return Err(Error::shape(format!(
                "expected {depth} layers, got {} weight matrices and {} bias vectors",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (fan_in, fan_out) = (self.arch.widths[k], self.arch.widths[k + 1]);
            if w.shape() != (fan_in, fan_out) {
                return Err(Error::shape(format!(
                    "W_{} is {:?}, expected {:?}",
                    k + 1,
                    w.shape(),
                    (fan_in, fan_out)
                )));
            }
            if b.len() != fan_out {
                return Err(Error::shape(format!(
                    "b_{} has length {}, expected {fan_out}",
                    k + 1,
                    b.len()
                )));
            }
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {} parameters", k + 1)));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    pub fn activation(&self) -> ActivationKind {
        self.arch.activation
    }

    /// `W_k` with 1-based layer index.
    pub fn weight(&self, k: usize) -> &Matrix {
        &self.weights[k - 1]
    }

    pub fn bias(&self, k: usize) -> &[f64] {
        &self.biases[k - 1]
    }
}

/// Per-layer pre-activations `G_k` and activations `F_k = σ(G_k)` over all samples.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Matrix,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
}

impl ForwardCache {
    /// `G_k`, 1-based.
    pub fn g(&self, k: usize) -> &Matrix {
        &self.pre[k - 1]
    }

    /// `F_k`, 1-based; `F_0` is the input.
    pub fn f(&self, k: usize) -> &Matrix {
        if k == 0 {
            &self.input
        } else {
            &self.post[k - 1]
        }
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().expect("forward cache has at least one layer")
    }

    pub fn depth(&self) -> usize {
        self.post.len()
    }
}

pub fn forward(params: &NetworkParams, x: &Matrix) -> Result<ForwardCache> {
    if x.cols() != params.arch.input_dim() {
        return Err(Error::shape(format!(
            "input has {} columns, architecture expects n_0 = {}",
            x.cols(),
            params.arch.input_dim()
        )));
    }
    let act = params.activation();
    let mut pre = Vec::with_capacity(params.depth());
    let mut post: Vec<Matrix> = Vec::with_capacity(params.depth());
    for (w, b) in params.weights.iter().zip(&params.biases) {
        let prev = post.last().unwrap_or(x);
        let g = prev.matmul(w)?.add_row_broadcast(b)?;
        let f = g.map(|t| act.value(t));
        pre.push(g);
        post.push(f);
    }
    Ok(ForwardCache {
        input: x.clone(),
        pre,
        post,
    })
}

/// Sampling grid `t_i = -T + 2T i / (points - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditGrid {
    pub half_width: f64,
    pub points: usize,
}

impl Default for AuditGrid {
    fn default() -> Self {
        Self {
            half_width: 50.0,
            points: 10_000,
        }
    }
}

impl AuditGrid {
    fn validate(&self) -> Result<()> {
        if !(self.half_width >= 50.0) || self.points < 10_000 {
            return Err(Error::invalid(format!(
                "audit grid must cover [-T, T] with T >= 50 and at least 10^4 points, got T = {}, {} points",
                self.half_width, self.points
            )));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        let step = 2.0 * self.half_width / (self.points - 1) as f64;
        (0..self.points).map(move |i| -self.half_width + step * i as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AuditMode {
    /// `μ < σ(t) < γ` and strictly increasing samples.
    Bounded,
    /// `|σ(t)| ≤ ρ₁ e^{ρ₂ t}` for `t < 0`, `|σ(t)| ≤ ρ₃ t + ρ₄` for `t ≥ 0`.
    Growth { rho: [f64; 4] },
}

impl AuditMode {
    /// `(1/α, α, 1, ln 2/α)` for softplus with sharpness `α`.
    pub fn softplus_growth(alpha: f64) -> AuditMode {
        AuditMode::Growth {
            rho: [1.0 / alpha, alpha, 1.0, std::f64::consts::LN_2 / alpha],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditVerdict {
    pub passed: bool,
    pub first_violation: Option<f64>,
    pub bounds: Option<(f64, f64)>,
    pub detail: String,
}

// Growth bounds are compared with a few ulps of slack: at t = 0 and in the far
// negative tail the softplus bound is attained up to rounding.
const GROWTH_SLACK: f64 = 8.0 * f64::EPSILON;

pub fn audit_activation(kind: ActivationKind, mode: AuditMode, grid: AuditGrid) -> Result<AuditVerdict> {
    kind.validate()?;
    grid.validate()?;
    match mode {
        AuditMode::Bounded => {
            let Some(bounds) = kind.bounds() else {
                return Ok(AuditVerdict {
                    passed: false,
                    first_violation: None,
                    bounds: None,
                    detail: format!("{} has no finite range bounds", kind.name()),
                });
            };
            let mut prev: Option<(f64, f64)> = None;
            for t in grid.iter() {
                let (lower, upper) = kind.range_gaps(t).expect("bounded kind");
                if !(lower > 0.0 && upper > 0.0) {
                    return Ok(AuditVerdict {
                        passed: false,
                        first_violation: Some(t),
                        bounds: Some(bounds),
                        detail: format!("value leaves ({}, {}) at t = {t}", bounds.0, bounds.1),
                    });
                }
                if let Some((pl, pu)) = prev {
                    // increasing value ⇔ lower gap grows and upper gap shrinks
                    if !(lower > pl || upper < pu) || lower < pl || upper > pu {
                        return Ok(AuditVerdict {
                            passed: false,
                            first_violation: Some(t),
                            bounds: Some(bounds),
                            detail: format!("samples not strictly increasing at t = {t}"),
                        });
                    }
                }
                prev = Some((lower, upper));
            }
            Ok(AuditVerdict {
                passed: true,
                first_violation: None,
                bounds: Some(bounds),
                detail: format!("{} stays in ({}, {}) and increases strictly", kind.name(), bounds.0, bounds.1),
            })
        }
        AuditMode::Growth { rho } => {
            if let Some(bad) = rho.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
                return Err(Error::invalid(format!("growth constants must be positive, got {bad}")));
            }
            let [r1, r2, r3, r4] = rho;
            for t in grid.iter() {
                let v = kind.value(t).abs();
                let bound = if t < 0.0 { r1 * (r2 * t).exp() } else { r3 * t + r4 };
                if v > bound * (1.0 + GROWTH_SLACK) {
                    return Ok(AuditVerdict {
                        passed: false,
                        first_violation: Some(t),
                        bounds: kind.bounds(),
                        detail: format!("|σ({t})| = {v} exceeds growth bound {bound}"),
                    });
                }
            }
            Ok(AuditVerdict {
                passed: true,
                first_violation: None,
                bounds: kind.bounds(),
                detail: format!("{} satisfies growth bounds {rho:?}", kind.name()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const KINDS: [ActivationKind; 3] = [
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Softplus { alpha: 1.0 },
    ];

    #[test]
    fn activation_values_at_origin() {
        assert_eq!(activation_eval(ActivationKind::Sigmoid, 0.0), (0.5, 0.25));
        assert_eq!(activation_eval(ActivationKind::Tanh, 0.0), (0.0, 1.0));
        let (v, d) = activation_eval(ActivationKind::Softplus { alpha: 1.0 }, 0.0);
        assert_relative_eq!(v, std::f64::consts::LN_2, max_relative = 1e-15);
        assert_relative_eq!(v, 0.693147, epsilon = 1e-6);
        assert_eq!(d, 0.5);
    }

    #[test]
    fn softplus_rejects_nonpositive_alpha() {
        assert!(ActivationKind::softplus(0.0).is_err());
        assert!(ActivationKind::softplus(-1.0).is_err());
        assert!(ActivationKind::softplus(2.0).is_ok());
    }

    #[test]
    fn softplus_is_overflow_safe() {
        let sp = ActivationKind::Softplus { alpha: 100.0 };
        assert_relative_eq!(sp.value(1e3), 1e3, max_relative = 1e-15);
        assert!(sp.value(-1e3) >= 0.0);
        assert_eq!(sp.derivative(1e3), 1.0);
        assert!(ActivationKind::Sigmoid.value(-1e3).is_finite());
    }

    #[test]
    fn derivatives_strictly_positive_on_sample_range() {
        for kind in KINDS {
            for i in 0..=10_000 {
                let t = -50.0 + 0.01 * i as f64;
                assert!(kind.derivative(t) > 0.0, "{kind:?} at {t}");
            }
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for kind in KINDS.iter().chain(&[ActivationKind::Softplus { alpha: 3.0 }]) {
            for _ in 0..1000 {
                let t: f64 = rng.random_range(-10.0..10.0);
                let fd = (kind.value(t + h) - kind.value(t - h)) / (2.0 * h);
                assert!((kind.derivative(t) - fd).abs() <= 1e-6, "{kind:?} at {t}");
            }
        }
    }

    #[test]
    fn softplus_approaches_relu() {
        for alpha in [1.0, 10.0, 100.0] {
            let sp = ActivationKind::Softplus { alpha };
            for i in 0..=2000 {
                let t = -10.0 + 0.01 * i as f64;
                let gap = (sp.value(t) - t.max(0.0)).abs();
                assert!(gap <= std::f64::consts::LN_2 / alpha * (1.0 + 1e-12), "alpha {alpha}, t {t}");
            }
        }
    }

    #[test]
    fn forward_zero_params_gives_half() {
        let arch = Architecture::new(vec![3, 4], ActivationKind::Sigmoid).unwrap();
        let p = NetworkParams::zeros(&arch);
        let x = Matrix::from_fn(5, 3, |i, j| (i + j) as f64);
        let cache = forward(&p, &x).unwrap();
        assert!(cache.f(1).as_slice().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn forward_single_unit() {
        let arch = Architecture::new(vec![1, 1], ActivationKind::Sigmoid).unwrap();
        let p = NetworkParams::new(arch, vec![Matrix::identity(1)], vec![vec![0.0]]).unwrap();
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let cache = forward(&p, &x).unwrap();
        assert_eq!(cache.output().get(0, 0), 0.5);
        assert_relative_eq!(cache.output().get(1, 0), 0.7310585786300049, max_relative = 1e-15);
    }

    #[test]
    fn forward_shapes_and_composition() {
        let arch = Architecture::new(vec![3, 4, 2], ActivationKind::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NetworkParams::random_init(&arch, 1.0, &mut rng);
        let x = Matrix::from_fn(5, 3, |i, j| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let cache = forward(&p, &x).unwrap();
        assert_eq!(cache.f(1).shape(), (5, 4));
        assert_eq!(cache.f(2).shape(), (5, 2));
        for k in 1..=2 {
            let g = cache.f(k - 1).matmul(p.weight(k)).unwrap().add_row_broadcast(p.bias(k)).unwrap();
            assert_eq!(&g, cache.g(k));
            assert_eq!(&g.map(|t| t.tanh()), cache.f(k));
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let arch = Architecture::new(vec![3, 2], ActivationKind::Sigmoid).unwrap();
        let p = NetworkParams::zeros(&arch);
        assert!(forward(&p, &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn params_validate_shapes() {
        let arch = Architecture::new(vec![2, 3], ActivationKind::Sigmoid).unwrap();
        assert!(NetworkParams::new(arch.clone(), vec![Matrix::zeros(3, 2)], vec![vec![0.0; 3]]).is_err());
        assert!(NetworkParams::new(arch, vec![Matrix::zeros(2, 3)], vec![vec![0.0; 2]]).is_err());
        assert!(Architecture::new(vec![2, 0, 1], ActivationKind::Sigmoid).is_err());
        assert!(Architecture::new(vec![2], ActivationKind::Sigmoid).is_err());
    }

    #[test]
    fn bounded_audits() {
        for kind in [ActivationKind::Sigmoid, ActivationKind::Tanh] {
            let v = audit_activation(kind, AuditMode::Bounded, AuditGrid::default()).unwrap();
            assert!(v.passed, "{}", v.detail);
        }
        let v = audit_activation(ActivationKind::Sigmoid, AuditMode::Bounded, AuditGrid::default()).unwrap();
        assert_eq!(v.bounds, Some((0.0, 1.0)));
        let sp = audit_activation(ActivationKind::Softplus { alpha: 1.0 }, AuditMode::Bounded, AuditGrid::default())
            .unwrap();
        assert!(!sp.passed);
    }

    #[test]
    fn growth_audits() {
        let ln2 = std::f64::consts::LN_2;
        let ok = audit_activation(
            ActivationKind::Softplus { alpha: 1.0 },
            AuditMode::Growth { rho: [1.0, 1.0, 1.0, ln2] },
            AuditGrid::default(),
        )
        .unwrap();
        assert!(ok.passed, "{}", ok.detail);
        let bad = audit_activation(
            ActivationKind::Softplus { alpha: 1.0 },
            AuditMode::Growth { rho: [1e-6, 1.0, 1.0, ln2] },
            AuditGrid::default(),
        )
        .unwrap();
        assert!(!bad.passed);
        assert!(bad.first_violation.unwrap() < 0.0);
    }

    #[test]
    fn audit_rejects_bad_inputs() {
        let kind = ActivationKind::Softplus { alpha: 1.0 };
        assert!(audit_activation(kind, AuditMode::Growth { rho: [0.0, 1.0, 1.0, 1.0] }, AuditGrid::default()).is_err());
        let small = AuditGrid { half_width: 10.0, points: 10_000 };
        assert!(audit_activation(kind, AuditMode::Bounded, small).is_err());
    }
}
