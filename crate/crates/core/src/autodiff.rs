//! Backpropagation and finite-difference oracles.
//!
//! [`backward`] applies the layer recursion
//! `Δ_L = l'(F_L − Y) ∘ σ'(G_L)`, `Δ_k = (Δ_{k+1} W_{k+1}ᵀ) ∘ σ'(G_k)` and reads the
//! gradients off as `∇W_k = F_{k−1}ᵀ Δ_k`, `∇b_k = Δ_kᵀ 1_N`. The finite-difference
//! routines work on any flat objective and are used both as test oracles and to
//! build (block) Hessians.

use crate::error::{Error, Result};
use crate::linalg::{max_singular_value, min_singular_value, Matrix};
use crate::losses::{residual_terms, LabeledDataset, Loss};
use crate::model::{forward, Architecture, ForwardCache, NetworkParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Debug, Clone)]
pub struct BackwardCache {
    pub deltas: Vec<Matrix>,
    pub grad_w: Vec<Matrix>,
    pub grad_b: Vec<Vec<f64>>,
}

impl BackwardCache {
    /// `Δ_k`, 1-based.
    pub fn delta(&self, k: usize) -> &Matrix {
        &self.deltas[k - 1]
    }

    pub fn flatten(&self, layout: &ParamLayout) -> Vec<f64> {
        let mut flat = vec![0.0; layout.len()];
        for (k, (gw, gb)) in self.grad_w.iter().zip(&self.grad_b).enumerate() {
            flat[layout.weights(k + 1)].copy_from_slice(gw.as_slice());
            flat[layout.biases(k + 1)].copy_from_slice(gb);
        }
        flat
    }
}

fn check_cache(cache: &ForwardCache, params: &NetworkParams, data: &LabeledDataset) -> Result<()> {
    if cache.depth() != params.depth() {
        return Err(Error::shape(format!(
            "forward cache has {} layers, parameters have {}",
            cache.depth(),
            params.depth()
        )));
    }
    let n = data.len();
    for k in 1..=params.depth() {
        let expected = (n, params.arch.width(k));
        if cache.g(k).shape() != expected || cache.f(k).shape() != expected {
            return Err(Error::shape(format!(
                "cached layer {k} is {:?}, expected {expected:?}",
                cache.g(k).shape()
            )));
        }
    }
    if cache.input != *data.x() {
        return Err(Error::invalid("forward cache was computed on different inputs"));
    }
    Ok(())
}

/// Sensitivities and gradients for a cache produced by `forward(params, data.x())`.
pub fn backward(
    cache: &ForwardCache,
    params: &NetworkParams,
    data: &LabeledDataset,
    loss: &Loss,
) -> Result<BackwardCache> {
    check_cache(cache, params, data)?;
    let (_, slopes) = residual_terms(cache.output(), data, loss)?;
    let depth = params.depth();
    let act = params.activation();
    let sigma_prime = |g: &Matrix| g.map(|t| act.derivative(t));

    let mut deltas: Vec<Matrix> = Vec::with_capacity(depth);
    deltas.push(slopes.hadamard(&sigma_prime(cache.g(depth)))?);
    for k in (1..depth).rev() {
        let upstream = deltas.last().unwrap().matmul_t(params.weight(k + 1))?;
        deltas.push(upstream.hadamard(&sigma_prime(cache.g(k)))?);
    }
    deltas.reverse();

    let mut grad_w = Vec::with_capacity(depth);
    let mut grad_b = Vec::with_capacity(depth);
    for k in 1..=depth {
        grad_w.push(cache.f(k - 1).t_matmul(&deltas[k - 1])?);
        grad_b.push(deltas[k - 1].column_sums());
    }
    Ok(BackwardCache {
        deltas,
        grad_w,
        grad_b,
    })
}

/// Offsets of `vec(W_k)` (row-major) and `b_k` inside the flat vector
/// `[vec(W_1), b_1, …, vec(W_L), b_L]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    layers: Vec<LayerSlot>,
    total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LayerSlot {
    offset: usize,
    fan_in: usize,
    fan_out: usize,
}

impl ParamLayout {
    pub fn new(arch: &Architecture) -> Self {
        let mut offset = 0;
        let layers = arch
            .widths
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    offset,
                    fan_in: w[0],
                    fan_out: w[1],
                };
                offset += (w[0] + 1) * w[1];
                slot
            })
            .collect();
        Self {
            layers,
            total: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Indices of `vec(W_k)`, 1-based layer.
    pub fn weights(&self, k: usize) -> Range<usize> {
        let s = self.layers[k - 1];
        s.offset..s.offset + s.fan_in * s.fan_out
    }

    pub fn biases(&self, k: usize) -> Range<usize> {
        let s = self.layers[k - 1];
        let start = s.offset + s.fan_in * s.fan_out;
        start..start + s.fan_out
    }

    /// All parameters `(W_k, b_k)` of layer k.
    pub fn layer(&self, k: usize) -> Range<usize> {
        let s = self.layers[k - 1];
        s.offset..s.offset + (s.fan_in + 1) * s.fan_out
    }

    /// Parameters of layers `from..=to`; `layers_span(1, k)` is `u`, `layers_span(k+1, L)` is `v`.
    pub fn layers_span(&self, from: usize, to: usize) -> Range<usize> {
        self.layer(from).start..self.layer(to).end
    }

    /// Concatenated indices of the given 1-based layers, each layer in layout order.
    pub fn indices_for_layers(&self, layers: &[usize]) -> Result<Vec<usize>> {
        let mut sorted = layers.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != layers.len() {
            return Err(Error::invalid(format!("duplicate layer in {layers:?}")));
        }
        if let Some(bad) = sorted.iter().find(|k| **k == 0 || **k > self.depth()) {
            return Err(Error::invalid(format!(
                "layer {bad} outside [1, {}]",
                self.depth()
            )));
        }
        Ok(sorted.into_iter().flat_map(|k| self.layer(k)).collect())
    }
}

/// Flat parameter vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub flat: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn from_params(params: &NetworkParams) -> Self {
        let layout = ParamLayout::new(&params.arch);
        let mut flat = vec![0.0; layout.len()];
        for k in 1..=params.depth() {
            flat[layout.weights(k)].copy_from_slice(params.weight(k).as_slice());
            flat[layout.biases(k)].copy_from_slice(params.bias(k));
        }
        Self { flat, layout }
    }

    pub fn to_params(&self, arch: &Architecture) -> Result<NetworkParams> {
        unflatten(arch, &self.layout, &self.flat)
    }
}

pub fn unflatten(arch: &Architecture, layout: &ParamLayout, flat: &[f64]) -> Result<NetworkParams> {
    if flat.len() != layout.len() || layout.depth() != arch.depth() {
        return Err(Error::shape(format!(
            "flat vector of length {} for layout of length {}",
            flat.len(),
            layout.len()
        )));
    }
    let mut weights = Vec::with_capacity(arch.depth());
    let mut biases = Vec::with_capacity(arch.depth());
    for k in 1..=arch.depth() {
        weights.push(Matrix::from_row_major(
            arch.width(k - 1),
            arch.width(k),
            flat[layout.weights(k)].to_vec(),
        )?);
        biases.push(flat[layout.biases(k)].to_vec());
    }
    NetworkParams::new(arch.clone(), weights, biases)
}

/// Objective `Φ` over flat parameters for a fixed architecture, dataset and loss.
#[derive(Debug, Clone)]
pub struct TrainingProblem {
    pub arch: Architecture,
    pub data: LabeledDataset,
    pub loss: Loss,
    layout: ParamLayout,
}

impl TrainingProblem {
    pub fn new(arch: Architecture, data: LabeledDataset, loss: Loss) -> Result<Self> {
        arch.validate()?;
        loss.validate()?;
        if data.input_dim() != arch.input_dim() || data.output_dim() != arch.output_dim() {
            return Err(Error::shape(format!(
                "dataset is {}→{}, architecture is {}→{}",
                data.input_dim(),
                data.output_dim(),
                arch.input_dim(),
                arch.output_dim()
            )));
        }
        if matches!(loss, Loss::Separable) && data.classes().is_none() {
            return Err(Error::invalid("separable loss requires class labels"));
        }
        let layout = ParamLayout::new(&arch);
        Ok(Self {
            arch,
            data,
            loss,
            layout,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self, flat: &[f64]) -> Result<NetworkParams> {
        unflatten(&self.arch, &self.layout, flat)
    }

    /// `Φ(θ)`; NaN when θ is not finite.
    pub fn objective(&self, flat: &[f64]) -> f64 {
        match self.params(flat) {
            Ok(p) => crate::losses::objective(&p, &self.data, &self.loss).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        }
    }

    pub fn value_and_gradient(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let params = self.params(flat)?;
        let (phi, back) = loss_and_backward(&params, &self.data, &self.loss)?;
        Ok((phi, back.flatten(&self.layout)))
    }

    pub fn gradient(&self, flat: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(flat)?.1)
    }
}

/// Forward + backward at `params`, returning `Φ` and the backward cache.
pub fn loss_and_backward(
    params: &NetworkParams,
    data: &LabeledDataset,
    loss: &Loss,
) -> Result<(f64, BackwardCache)> {
    let cache = forward(params, data.x())?;
    let (values, _) = residual_terms(cache.output(), data, loss)?;
    let back = backward(&cache, params, data, loss)?;
    Ok((values.as_slice().iter().sum(), back))
}

pub fn gradient_norm(params: &NetworkParams, data: &LabeledDataset, loss: &Loss) -> Result<f64> {
    let (_, back) = loss_and_backward(params, data, loss)?;
    let layout = ParamLayout::new(&params.arch);
    Ok(norm2(&back.flatten(&layout)))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-coordinate finite-difference step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdStep {
    /// `h_i = c · (1 + |θ_i|)`
    Relative(f64),
    Absolute(f64),
}

impl FdStep {
    /// Default for gradients: `1e-6 · (1 + |θ_i|)`.
    pub const GRADIENT: FdStep = FdStep::Relative(1e-6);

    /// Default for Hessians: `eps^{1/3} · (1 + |θ_i|)`.
    pub fn hessian() -> FdStep {
        FdStep::Relative(f64::EPSILON.cbrt())
    }

    pub fn at(&self, theta_i: f64) -> f64 {
        match *self {
            FdStep::Relative(c) => c * (1.0 + theta_i.abs()),
            FdStep::Absolute(h) => h,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            FdStep::Relative(c) => c,
            FdStep::Absolute(h) => h,
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("finite-difference step must be positive, got {v}")))
        }
    }
}

fn probe<F>(objective: &F, theta: &[f64], shifts: &[(usize, f64)]) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    let mut point = theta.to_vec();
    for &(i, h) in shifts {
        point[i] += h;
    }
    objective(&point)
}

/// Central differences `(Φ(θ + h e_i) − Φ(θ − h e_i)) / 2h` for every coordinate.
pub fn gradient_fd<F>(objective: &F, theta: &[f64], step: FdStep) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    step.validate()?;
    (0..theta.len())
        .into_par_iter()
        .map(|i| {
            let h = step.at(theta[i]);
            let up = probe(objective, theta, &[(i, h)]);
            let down = probe(objective, theta, &[(i, -h)]);
            if !(up.is_finite() && down.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "objective evaluation while perturbing coordinate {i}"
                )));
            }
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Symmetrized Hessian estimate over a coordinate subset.
#[derive(Debug, Clone)]
pub struct BlockHessian {
    pub matrix: Matrix,
    /// Largest `|H_ij − H_ji|` before symmetrization.
    pub asymmetry: f64,
    /// `asymmetry ≤ 1e-3 · (1 + ‖H‖_F)`
    pub reliable: bool,
}

impl BlockHessian {
    fn from_raw(raw: Matrix) -> Result<Self> {
        if !raw.is_finite() {
            return Err(Error::NonFinite("Hessian estimate".into()));
        }
        let asymmetry = raw.asymmetry();
        let n = raw.rows();
        let sym = Matrix::from_fn(n, n, |i, j| 0.5 * (raw.get(i, j) + raw.get(j, i)));
        let reliable = asymmetry <= 1e-3 * (1.0 + sym.frobenius_norm());
        Ok(Self {
            matrix: sym,
            asymmetry,
            reliable,
        })
    }
}

fn check_subset(subset: &[usize], dim: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::invalid("Hessian subset is empty"));
    }
    let mut seen = vec![false; dim];
    for &i in subset {
        if i >= dim {
            return Err(Error::invalid(format!("coordinate {i} outside [0, {dim})")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(format!("duplicate coordinate {i}")));
        }
    }
    Ok(())
}

/// Second central differences of `objective` over the coordinates in `subset` (0-based).
pub fn block_hessian<F>(objective: &F, theta: &[f64], subset: &[usize], step: FdStep) -> Result<BlockHessian>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    step.validate()?;
    check_subset(subset, theta.len())?;
    let s = subset.len();
    let center = objective(theta);
    let steps: Vec<f64> = subset.iter().map(|&i| step.at(theta[i])).collect();
    let entries: Vec<(usize, usize, f64)> = (0..s)
        .flat_map(|a| (a..s).map(move |b| (a, b)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(a, b)| {
            let (i, hi) = (subset[a], steps[a]);
            let value = if a == b {
                let up = probe(objective, theta, &[(i, hi)]);
                let down = probe(objective, theta, &[(i, -hi)]);
                (up - 2.0 * center + down) / (hi * hi)
            } else {
                let (j, hj) = (subset[b], steps[b]);
                let pp = probe(objective, theta, &[(i, hi), (j, hj)]);
                let pm = probe(objective, theta, &[(i, hi), (j, -hj)]);
                let mp = probe(objective, theta, &[(i, -hi), (j, hj)]);
                let mm = probe(objective, theta, &[(i, -hi), (j, -hj)]);
                (pp - pm - mp + mm) / (4.0 * hi * hj)
            };
            (a, b, value)
        })
        .collect();
    let mut raw = Matrix::from_raw(s, s, vec![0.0; s * s]);
    for (a, b, v) in entries {
        raw.set(a, b, v);
        raw.set(b, a, v);
    }
    BlockHessian::from_raw(raw)
}

/// Block Hessian from central differences of an exact gradient:
/// column `b` is `(∇_S Φ(θ + h e_b) − ∇_S Φ(θ − h e_b)) / 2h`.
pub fn block_hessian_from_gradient<G>(
    gradient: &G,
    theta: &[f64],
    subset: &[usize],
    step: FdStep,
) -> Result<BlockHessian>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync + ?Sized,
{
    step.validate()?;
    check_subset(subset, theta.len())?;
    let s = subset.len();
    let columns: Vec<Vec<f64>> = (0..s)
        .into_par_iter()
        .map(|b| {
            let j = subset[b];
            let h = step.at(theta[j]);
            let mut point = theta.to_vec();
            point[j] = theta[j] + h;
            let up = gradient(&point)?;
            point[j] = theta[j] - h;
            let down = gradient(&point)?;
            Ok(subset.iter().map(|&i| (up[i] - down[i]) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    let raw = Matrix::from_fn(s, s, |a, b| columns[b][a]);
    BlockHessian::from_raw(raw)
}

/// Singularity threshold for non-degeneracy tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NondegeneracyThreshold {
    /// `τ = c · max(1, σ_max(H))`
    Relative(f64),
    Absolute(f64),
}

impl Default for NondegeneracyThreshold {
    fn default() -> Self {
        NondegeneracyThreshold::Relative(1e-6)
    }
}

impl NondegeneracyThreshold {
    pub fn resolve(&self, h: &Matrix) -> f64 {
        match *self {
            NondegeneracyThreshold::Relative(c) => c * max_singular_value(h).max(1.0),
            NondegeneracyThreshold::Absolute(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NondegeneracyVerdict {
    pub nondegenerate: bool,
    /// Smallest singular value of H.
    pub margin: f64,
    pub threshold: f64,
}

pub fn check_nondegenerate(h: &Matrix, tau: NondegeneracyThreshold) -> Result<NondegeneracyVerdict> {
    if !h.is_square() {
        return Err(Error::shape(format!("Hessian is {:?}", h.shape())));
    }
    let threshold = tau.resolve(h);
    let margin = min_singular_value(h);
    Ok(NondegeneracyVerdict {
        nondegenerate: margin > threshold,
        margin,
        threshold,
    })
}
