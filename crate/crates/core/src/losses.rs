//! Residual losses for regression and the one-vs-rest separable loss pair.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{forward, ActivationKind, NetworkParams};
use serde::{Deserialize, Serialize};

/// Residual loss `l(f − y)` for the regression objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionLossKind {
    Squared,
    PseudoHuber { delta: f64 },
    BlakeZisserman { delta: f64 },
    CorruptedGaussian { alpha: f64, w: f64 },
    Cauchy { delta: f64 },
}

impl RegressionLossKind {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RegressionLossKind::Squared => true,
            RegressionLossKind::PseudoHuber { delta } | RegressionLossKind::BlakeZisserman { delta } => {
                delta > 0.0 && delta.is_finite()
            }
            RegressionLossKind::CorruptedGaussian { alpha, w } => {
                (0.0..=1.0).contains(&alpha) && w > 0.0 && w.is_finite()
            }
            RegressionLossKind::Cauchy { delta } => delta != 0.0 && delta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("loss parameters out of domain: {self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegressionLossKind::Squared => "squared",
            RegressionLossKind::PseudoHuber { .. } => "pseudo_huber",
            RegressionLossKind::BlakeZisserman { .. } => "blake_zisserman",
            RegressionLossKind::CorruptedGaussian { .. } => "corrupted_gaussian",
            RegressionLossKind::Cauchy { .. } => "cauchy",
        }
    }

    /// `(l(a), l'(a))`
    pub fn eval(&self, a: f64) -> (f64, f64) {
        match *self {
            RegressionLossKind::Squared => (a * a, 2.0 * a),
            RegressionLossKind::PseudoHuber { delta } => {
                let u = (a / delta) * (a / delta);
                let root = (1.0 + u).sqrt();
                // 2δ²(√(1+u) − 1) = 2δ² u / (√(1+u) + 1)
                (2.0 * delta * delta * u / (root + 1.0), 2.0 * a / root)
            }
            RegressionLossKind::BlakeZisserman { delta } => {
                // −log(e^{−a²} + δ) = −log δ − log1p(s), s = e^{−a²}/δ
                let s = (-a * a).exp() / delta;
                (-delta.ln() - s.ln_1p(), 2.0 * a * s / (1.0 + s))
            }
            RegressionLossKind::CorruptedGaussian { alpha, w } => {
                let inv_w2 = 1.0 / (w * w);
                // log-weights of the two mixture terms
                let mut terms: [(f64, f64); 2] = [(f64::NEG_INFINITY, 1.0), (f64::NEG_INFINITY, inv_w2)];
                if alpha > 0.0 {
                    terms[0].0 = alpha.ln() - a * a;
                }
                if alpha < 1.0 {
                    terms[1].0 = (1.0 - alpha).ln() - w.ln() - a * a * inv_w2;
                }
                let peak = terms[0].0.max(terms[1].0);
                let weights = terms.map(|(lw, _)| (lw - peak).exp());
                let total: f64 = weights.iter().sum();
                let value = -(peak + total.ln());
                let slope = weights
                    .iter()
                    .zip(&terms)
                    .map(|(wt, (_, s))| wt * s)
                    .sum::<f64>()
                    / total;
                (value, 2.0 * a * slope)
            }
            RegressionLossKind::Cauchy { delta } => {
                let d2 = delta * delta;
                (d2 * (a * a / d2).ln_1p(), 2.0 * a / (1.0 + a * a / d2))
            }
        }
    }

    pub fn value(&self, a: f64) -> f64 {
        self.eval(a).0
    }

    pub fn derivative(&self, a: f64) -> f64 {
        self.eval(a).1
    }

    /// Every kind attains its global minimum at zero residual.
    pub fn minimum_value(&self) -> f64 {
        self.value(0.0)
    }
}

pub fn regression_loss_eval(kind: RegressionLossKind, a: f64) -> (f64, f64) {
    kind.eval(a)
}

/// `l₁(a) = a²` for `a ≤ 0`, else 0.
#[inline]
pub fn l1(a: f64) -> (f64, f64) {
    if a <= 0.0 {
        (a * a, 2.0 * a)
    } else {
        (0.0, 0.0)
    }
}

/// `l₂(a) = a²` for `a ≥ 0`, else 0.
#[inline]
pub fn l2(a: f64) -> (f64, f64) {
    if a >= 0.0 {
        (a * a, 2.0 * a)
    } else {
        (0.0, 0.0)
    }
}

/// Applies `l₁` to true-class entries and `l₂` to the others.
pub fn separable_loss_eval(a: f64, in_class: bool) -> (f64, f64) {
    if in_class {
        l1(a)
    } else {
        l2(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Loss {
    Regression { kind: RegressionLossKind },
    Separable,
}

impl Loss {
    pub fn regression(kind: RegressionLossKind) -> Self {
        Loss::Regression { kind }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Loss::Regression { kind } => kind.validate(),
            Loss::Separable => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Loss::Regression { kind } => kind.name(),
            Loss::Separable => "separable",
        }
    }
}

/// Training data: inputs `X` (N×d), targets `Y` (N×m), optional 0-based class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    x: Matrix,
    y: Matrix,
    classes: Option<Vec<usize>>,
}

impl LabeledDataset {
    pub fn regression(x: Matrix, y: Matrix) -> Result<Self> {
        let data = Self { x, y, classes: None };
        data.validate()?;
        Ok(data)
    }

    /// Builds the ±1 one-vs-rest targets from 0-based labels in `[0, m)`.
    pub fn classification(x: Matrix, classes: Vec<usize>, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("number of classes must be positive"));
        }
        if classes.len() != x.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} samples",
                classes.len(),
                x.rows()
            )));
        }
        if let Some((i, c)) = classes.iter().enumerate().find(|(_, c)| **c >= m) {
            return Err(Error::invalid(format!(
                "sample {i} has class {} outside [1, {m}]",
                c + 1
            )));
        }
        let y = Matrix::from_fn(x.rows(), m, |i, j| if classes[i] == j { 1.0 } else { -1.0 });
        let data = Self {
            x,
            y,
            classes: Some(classes),
        };
        data.validate()?;
        Ok(data)
    }

    fn validate(&self) -> Result<()> {
        if self.x.rows() != self.y.rows() {
            return Err(Error::shape(format!(
                "X has {} rows, Y has {}",
                self.x.rows(),
                self.y.rows()
            )));
        }
        if let Some((i, j)) = first_duplicate_row(&self.x) {
            return Err(Error::Precondition(format!(
                "training samples {} and {} are identical",
                i + 1,
                j + 1
            )));
        }
        if let Some(classes) = &self.classes {
            for (i, c) in classes.iter().enumerate() {
                for j in 0..self.y.cols() {
                    let expected = if *c == j { 1.0 } else { -1.0 };
                    if self.y.get(i, j) != expected {
                        return Err(Error::invalid(format!(
                            "targets of sample {} are not the ±1 encoding of class {}",
                            i + 1,
                            c + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn classes(&self) -> Option<&[usize]> {
        self.classes.as_deref()
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.cols()
    }

    /// Same samples in a different order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.len()).collect::<Vec<_>>() {
            return Err(Error::invalid("order is not a permutation of the samples"));
        }
        Ok(Self {
            x: self.x.select_rows(order),
            y: self.y.select_rows(order),
            classes: self
                .classes
                .as_ref()
                .map(|c| order.iter().map(|&i| c[i]).collect()),
        })
    }

    /// Targets that a bounded output activation cannot reach, with a 5% margin
    /// of the range at either end. Empty for unbounded activations.
    pub fn unattainable_targets(&self, activation: ActivationKind) -> Vec<(usize, usize, f64)> {
        let Some((lo, hi)) = activation.bounds() else {
            return Vec::new();
        };
        let margin = 0.05 * (hi - lo);
        let mut out = Vec::new();
        for i in 0..self.y.rows() {
            for j in 0..self.y.cols() {
                let v = self.y.get(i, j);
                if !(v > lo + margin && v < hi - margin) {
                    out.push((i, j, v));
                }
            }
        }
        out
    }
}

fn first_duplicate_row(x: &Matrix) -> Option<(usize, usize)> {
    for i in 0..x.rows() {
        for j in (i + 1)..x.rows() {
            if x.row(i) == x.row(j) {
                return Some((i, j));
            }
        }
    }
    None
}

fn check_output_shape(output: &Matrix, data: &LabeledDataset) -> Result<()> {
    if output.shape() != data.y().shape() {
        return Err(Error::shape(format!(
            "network output is {:?}, targets are {:?}",
            output.shape(),
            data.y().shape()
        )));
    }
    Ok(())
}

/// Entrywise `(l(F_L − Y), l'(F_L − Y))` under `loss`, as two N×m matrices.
pub fn residual_terms(output: &Matrix, data: &LabeledDataset, loss: &Loss) -> Result<(Matrix, Matrix)> {
    check_output_shape(output, data)?;
    let (n, m) = output.shape();
    let classes = match loss {
        Loss::Separable => Some(
            data.classes()
                .ok_or_else(|| Error::invalid("separable loss requires class labels"))?,
        ),
        Loss::Regression { .. } => None,
    };
    let mut values = Vec::with_capacity(n * m);
    let mut slopes = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let a = output.get(i, j) - data.y().get(i, j);
            let (v, d) = match (loss, classes) {
                (Loss::Regression { kind }, _) => kind.eval(a),
                (Loss::Separable, Some(c)) => separable_loss_eval(a, c[i] == j),
                (Loss::Separable, None) => unreachable!(),
            };
            values.push(v);
            slopes.push(d);
        }
    }
    Ok((Matrix::from_raw(n, m, values), Matrix::from_raw(n, m, slopes)))
}

/// `Σ_i Σ_j l((F_L)_{ij} − Y_{ij})` for a precomputed network output.
pub fn objective_from_output(output: &Matrix, data: &LabeledDataset, loss: &Loss) -> Result<f64> {
    let (values, _) = residual_terms(output, data, loss)?;
    Ok(values.as_slice().iter().sum())
}

pub fn objective(params: &NetworkParams, data: &LabeledDataset, loss: &Loss) -> Result<f64> {
    let cache = forward(params, data.x())?;
    objective_from_output(cache.output(), data, loss)
}

pub fn objective_regression(
    params: &NetworkParams,
    data: &LabeledDataset,
    kind: RegressionLossKind,
) -> Result<f64> {
    objective(params, data, &Loss::regression(kind))
}

pub fn objective_separable(params: &NetworkParams, data: &LabeledDataset) -> Result<f64> {
    objective(params, data, &Loss::Separable)
}

/// `Σ max{0, 1 − y f}²` under the ±1 encoding.
pub fn squared_hinge(output: &Matrix, y: &Matrix) -> Result<f64> {
    if output.shape() != y.shape() {
        return Err(Error::shape("output and targets differ in shape"));
    }
    Ok(output
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(f, y)| (1.0 - y * f).max(0.0).powi(2))
        .sum())
}

/// Grid points whose derivative is below `flat_tol` in magnitude while the loss
/// sits more than `value_tol` above the grid minimum.
#[derive(Debug, Clone)]
pub struct StationarityAudit {
    pub grid_min: f64,
    pub offenders: Vec<(f64, f64, f64)>,
}

pub fn audit_stationary_points(
    kind: RegressionLossKind,
    half_width: f64,
    points: usize,
    flat_tol: f64,
    value_tol: f64,
) -> StationarityAudit {
    let step = 2.0 * half_width / (points - 1) as f64;
    let samples: Vec<(f64, f64, f64)> = (0..points)
        .map(|i| {
            let a = -half_width + step * i as f64;
            let (v, d) = kind.eval(a);
            (a, v, d)
        })
        .collect();
    let grid_min = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let offenders = samples
        .into_iter()
        .filter(|(_, v, d)| d.abs() < flat_tol && *v > grid_min + value_tol)
        .collect();
    StationarityAudit { grid_min, offenders }
}
