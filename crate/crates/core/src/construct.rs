//! Parameter constructions that drive `[F_k, 1_N]` to full row rank, and rank probes.
//!
//! The wide-layer construction sorts samples by a projection `aᵀz_i` and sets the
//! first `N−1` hidden units to `w_j = −αa`, `v_j = α z_jᵀa + β`. As `α` grows the
//! activation matrix approaches a triangular pattern, so the doubling schedule reaches
//! full rank after a handful of rank computations.

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, Matrix, RankTolerance};
use crate::model::{forward, ActivationKind, Architecture, NetworkParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const DIRECTION_ATTEMPTS: usize = 100;
const GAP_FLOOR: f64 = 1e-12;

/// Sorted projections with every consecutive gap above `1e-12 · max |p|`.
fn projections_distinct(p: &[f64]) -> bool {
    let scale = p.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).all(|w| w[1] - w[0] > GAP_FLOOR * scale && w[1] > w[0])
}

fn project(z: &Matrix, a: &[f64]) -> Vec<f64> {
    (0..z.rows())
        .map(|i| z.row(i).iter().zip(a).map(|(x, y)| x * y).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionDraw {
    pub direction: Vec<f64>,
    /// Rejected draws before `direction`.
    pub redraws: usize,
}

/// A standard-normal direction whose projections of the rows of `z` are pairwise distinct.
pub fn distinct_rows_direction<R: Rng + ?Sized>(z: &Matrix, rng: &mut R) -> Result<DirectionDraw> {
    if !z.has_distinct_rows() {
        return Err(Error::Precondition("rows must be pairwise distinct".into()));
    }
    for redraws in 0..DIRECTION_ATTEMPTS {
        let a: Vec<f64> = (0..z.cols()).map(|_| rng.sample(StandardNormal)).collect();
        if projections_distinct(&project(z, &a)) {
            return Ok(DirectionDraw { direction: a, redraws });
        }
    }
    Err(Error::DirectionSearch(DIRECTION_ATTEMPTS))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionConfig {
    /// Strictly increasing positive values of `α`.
    pub alpha_schedule: Vec<f64>,
    /// `None` selects 0 for bounded activations and 1 for softplus, which needs `σ(β) ≠ 0`.
    pub beta: Option<f64>,
    pub rank_tol: RankTolerance,
    /// Fresh directions tried after the schedule is exhausted.
    pub max_redraws: usize,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        Self {
            alpha_schedule: doubling_schedule(1.0, 15),
            beta: None,
            rank_tol: RankTolerance::Auto,
            max_redraws: 10,
        }
    }
}

/// `start · 2^i` for `i = 0..=doublings`.
pub fn doubling_schedule(start: f64, doublings: u32) -> Vec<f64> {
    (0..=doublings).map(|i| start * 2f64.powi(i as i32)).collect()
}

impl ConstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_schedule.is_empty() {
            return Err(Error::invalid("alpha schedule is empty"));
        }
        if self.alpha_schedule.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::invalid("alpha schedule entries must be positive and finite"));
        }
        if self.alpha_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("alpha schedule must be strictly increasing"));
        }
        if let Some(b) = self.beta {
            if !b.is_finite() {
                return Err(Error::invalid("beta must be finite"));
            }
        }
        Ok(())
    }

    fn beta_for(&self, activation: ActivationKind) -> Result<f64> {
        let beta = self.beta.unwrap_or(match activation {
            ActivationKind::Softplus { .. } => 1.0,
            _ => 0.0,
        });
        if matches!(activation, ActivationKind::Softplus { .. }) && activation.value(beta) == 0.0 {
            return Err(Error::invalid(format!("sigma(beta) vanishes at beta = {beta}")));
        }
        Ok(beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionTrace {
    pub direction: Vec<f64>,
    pub beta: f64,
    /// Values of `α` tried with the final direction, ending at `alpha_final`.
    pub alpha_schedule: Vec<f64>,
    pub alpha_final: f64,
    pub achieved_rank: usize,
    pub redraws: usize,
    /// Seeds of the random layers `1..k−1`.
    pub layer_seeds: Vec<u64>,
    /// Seed of the random layers above `k`, if any.
    pub upper_layers_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WideLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub trace: ConstructionTrace,
}

fn check_construction_inputs(z: &Matrix, width: usize, activation: ActivationKind) -> Result<()> {
    if !activation.is_certifiable() {
        return Err(Error::invalid(format!(
            "construction needs a sigmoid, tanh or softplus activation, got {}",
            activation.name()
        )));
    }
    activation.validate()?;
    let n = z.rows();
    if width + 1 < n {
        return Err(Error::Precondition(format!(
            "layer width {width} is below N − 1 = {}",
            n - 1
        )));
    }
    if !z.has_distinct_rows() {
        return Err(Error::Precondition("rows must be pairwise distinct".into()));
    }
    Ok(())
}

/// Weights and biases of the construction at a single `α`.
pub fn wide_layer_at(z: &Matrix, width: usize, a: &[f64], alpha: f64, beta: f64) -> Result<(Matrix, Vec<f64>)> {
    if a.len() != z.cols() {
        return Err(Error::shape(format!("direction has {} entries, rows have {}", a.len(), z.cols())));
    }
    let n = z.rows();
    let p = project(z, a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|i, j| p[*i].total_cmp(&p[*j]));
    let mut w = Matrix::zeros(z.cols(), width);
    let mut b = vec![0.0; width];
    for (j, &sample) in order.iter().take(n.saturating_sub(1)).enumerate() {
        for (r, ar) in a.iter().enumerate() {
            w.set(r, j, -alpha * ar);
        }
        b[j] = alpha * p[sample] + beta;
    }
    Ok((w, b))
}

/// `rank([σ(Z W + 1 bᵀ), 1_N])`
pub fn layer_feature_rank(
    z: &Matrix,
    w: &Matrix,
    b: &[f64],
    activation: ActivationKind,
    tol: RankTolerance,
) -> Result<usize> {
    let f = z.matmul(w)?.add_row_broadcast(b)?.map(|t| activation.value(t));
    Ok(numerical_rank(&f.append_ones_column(), tol))
}

/// Runs the `α` schedule for a fixed direction.
pub fn build_wide_layer_with_direction(
    z: &Matrix,
    width: usize,
    a: &[f64],
    activation: ActivationKind,
    cfg: &ConstructionConfig,
) -> Result<WideLayer> {
    cfg.validate()?;
    check_construction_inputs(z, width, activation)?;
    if !projections_distinct(&project(z, a)) {
        return Err(Error::Precondition("direction does not separate the rows".into()));
    }
    let beta = cfg.beta_for(activation)?;
    let n = z.rows();
    let mut best = 0;
    for (i, &alpha) in cfg.alpha_schedule.iter().enumerate() {
        let (w, b) = wide_layer_at(z, width, a, alpha, beta)?;
        let rank = layer_feature_rank(z, &w, &b, activation, cfg.rank_tol)?;
        best = best.max(rank);
        if rank == n {
            return Ok(WideLayer {
                weight: w,
                bias: b,
                trace: ConstructionTrace {
                    direction: a.to_vec(),
                    beta,
                    alpha_schedule: cfg.alpha_schedule[..=i].to_vec(),
                    alpha_final: alpha,
                    achieved_rank: rank,
                    redraws: 0,
                    layer_seeds: Vec::new(),
                    upper_layers_seed: None,
                },
            });
        }
    }
    Err(Error::ScheduleExhausted { best_rank: best, target: n })
}

/// Draws a direction and runs the schedule, re-drawing the direction when it stalls.
pub fn build_wide_layer<R: Rng + ?Sized>(
    z: &Matrix,
    width: usize,
    activation: ActivationKind,
    cfg: &ConstructionConfig,
    rng: &mut R,
) -> Result<WideLayer> {
    cfg.validate()?;
    check_construction_inputs(z, width, activation)?;
    let mut redraws = 0;
    let mut best = 0;
    for _ in 0..=cfg.max_redraws {
        let draw = distinct_rows_direction(z, rng)?;
        redraws += draw.redraws;
        match build_wide_layer_with_direction(z, width, &draw.direction, activation, cfg) {
            Ok(mut layer) => {
                layer.trace.redraws = redraws;
                return Ok(layer);
            }
            Err(Error::ScheduleExhausted { best_rank, .. }) => {
                best = best.max(best_rank);
                redraws += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::ScheduleExhausted {
        best_rank: best,
        target: z.rows(),
    })
}

fn random_layer<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> (Matrix, Vec<f64>) {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let w = Matrix::from_fn(fan_in, fan_out, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    let b = (0..fan_out).map(|_| rng.sample(StandardNormal)).collect();
    (w, b)
}

/// Full network whose layer `k` features satisfy `rank([F_k, 1_N]) = N`.
///
/// Layers `1..k−1` are random draws, re-drawn until their outputs keep the rows
/// distinct; layer `k` is the wide-layer construction on `F_{k−1}`; layers above `k`
/// are random draws. Every seed is recorded in the trace.
pub fn construct_full_rank_net<R: Rng + ?Sized>(
    x: &Matrix,
    arch: &Architecture,
    k: usize,
    cfg: &ConstructionConfig,
    rng: &mut R,
) -> Result<(NetworkParams, ConstructionTrace)> {
    arch.validate()?;
    let depth = arch.depth();
    if k == 0 || k > depth {
        return Err(Error::invalid(format!("layer k = {k} outside [1, {depth}]")));
    }
    if x.cols() != arch.input_dim() {
        return Err(Error::shape(format!(
            "input has {} columns, architecture expects {}",
            x.cols(),
            arch.input_dim()
        )));
    }
    if !x.has_distinct_rows() {
        return Err(Error::Precondition("input rows must be pairwise distinct".into()));
    }
    let activation = arch.activation;
    if arch.width(k) + 1 < x.rows() {
        return Err(Error::Precondition(format!(
            "n_{k} = {} is below N − 1 = {}",
            arch.width(k),
            x.rows() - 1
        )));
    }
    let mut params = NetworkParams::zeros(arch);
    let mut seeds = Vec::with_capacity(k - 1);
    let mut z = x.clone();
    for l in 1..k {
        let (fan_in, fan_out) = (arch.widths[l - 1], arch.widths[l]);
        let mut accepted = None;
        for _ in 0..DIRECTION_ATTEMPTS {
            let seed = rng.next_u64();
            let mut layer_rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, b) = random_layer(fan_in, fan_out, &mut layer_rng);
            let f = z.matmul(&w)?.add_row_broadcast(&b)?.map(|t| activation.value(t));
            if f.has_distinct_rows() && distinct_rows_direction(&f, &mut layer_rng).is_ok() {
                accepted = Some((seed, w, b, f));
                break;
            }
        }
        let (seed, w, b, f) = accepted.ok_or(Error::DirectionSearch(DIRECTION_ATTEMPTS))?;
        seeds.push(seed);
        params.weights[l - 1] = w;
        params.biases[l - 1] = b;
        z = f;
    }
    let layer = build_wide_layer(&z, arch.width(k), activation, cfg, rng)?;
    params.weights[k - 1] = layer.weight;
    params.biases[k - 1] = layer.bias;
    let mut trace = layer.trace;
    trace.layer_seeds = seeds;
    if k < depth {
        let seed = rng.next_u64();
        let mut upper_rng = ChaCha8Rng::seed_from_u64(seed);
        for l in k + 1..=depth {
            let (w, b) = random_layer(arch.widths[l - 1], arch.widths[l], &mut upper_rng);
            params.weights[l - 1] = w;
            params.biases[l - 1] = b;
        }
        trace.upper_layers_seed = Some(seed);
    }
    params.validate()?;
    Ok((params, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeTrial {
    pub trial: u64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankProbe {
    pub samples: usize,
    pub layer: usize,
    pub trials: Vec<ProbeTrial>,
    pub deficient: usize,
    pub fraction: f64,
}

/// Draws `trials` parameter sets for layers `1..=k` with every weight and bias entry
/// i.i.d. `N(0, init_scale²)` and counts draws with `rank([F_k, 1_N]) < N`.
///
/// Trial `t` uses `ChaCha8Rng::seed_from_u64(seed)` on stream `t`, so results do not
/// depend on the thread count.
pub fn rank_probe(
    arch: &Architecture,
    x: &Matrix,
    k: usize,
    trials: usize,
    init_scale: f64,
    seed: u64,
    tol: RankTolerance,
) -> Result<RankProbe> {
    arch.validate()?;
    let depth = arch.depth();
    if k == 0 || k > depth {
        return Err(Error::invalid(format!("layer k = {k} outside [1, {depth}]")));
    }
    if !(init_scale.is_finite() && init_scale > 0.0) {
        return Err(Error::invalid(format!("init_scale must be positive, got {init_scale}")));
    }
    if x.cols() != arch.input_dim() {
        return Err(Error::shape(format!(
            "input has {} columns, architecture expects {}",
            x.cols(),
            arch.input_dim()
        )));
    }
    let truncated = Architecture::new(arch.widths[..=k].to_vec(), arch.activation)?;
    let n = x.rows();
    let results: Vec<ProbeTrial> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let mut params = NetworkParams::zeros(&truncated);
            for (w, b) in params.weights.iter_mut().zip(params.biases.iter_mut()) {
                for v in w.as_mut_slice() {
                    *v = init_scale * rng.sample::<f64, _>(StandardNormal);
                }
                for v in b.iter_mut() {
                    *v = init_scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let cache = forward(&params, x)?;
            let f = cache.output();
            let rank = if f.is_finite() {
                numerical_rank(&f.append_ones_column(), tol)
            } else {
                0
            };
            Ok(ProbeTrial { trial, rank })
        })
        .collect::<Result<_>>()?;
    let deficient = results.iter().filter(|t| t.rank < n).count();
    Ok(RankProbe {
        samples: n,
        layer: k,
        trials: results,
        deficient,
        fraction: if trials == 0 { 0.0 } else { deficient as f64 / trials as f64 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearLayerRank {
    pub layer: usize,
    pub rank_features: usize,
    pub rank_previous: usize,
    pub rank_weight: usize,
    /// `min(rank F_{l−1}, rank W_l) + 1`
    pub bound: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IteratedBound {
    pub from_layer: usize,
    /// `rank W_l + k − l + 1`
    pub bound: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRankBound {
    pub layers: Vec<LinearLayerRank>,
    pub iterated: Vec<IteratedBound>,
    pub holds: bool,
}

/// Checks the rank growth bounds of an identity-activation network up to layer `k`.
pub fn linear_rank_bound(params: &NetworkParams, x: &Matrix, k: usize, tol: RankTolerance) -> Result<LinearRankBound> {
    if params.activation() != ActivationKind::Identity {
        return Err(Error::invalid(format!(
            "rank bound applies to the identity activation, got {}",
            params.activation().name()
        )));
    }
    let depth = params.depth();
    if k == 0 || k > depth {
        return Err(Error::invalid(format!("layer k = {k} outside [1, {depth}]")));
    }
    let cache = forward(params, x)?;
    let rank_f: Vec<usize> = (0..=k).map(|l| numerical_rank(cache.f(l), tol)).collect();
    let rank_w: Vec<usize> = (1..=k).map(|l| numerical_rank(params.weight(l), tol)).collect();
    let layers: Vec<LinearLayerRank> = (1..=k)
        .map(|l| {
            let bound = rank_f[l - 1].min(rank_w[l - 1]) + 1;
            LinearLayerRank {
                layer: l,
                rank_features: rank_f[l],
                rank_previous: rank_f[l - 1],
                rank_weight: rank_w[l - 1],
                bound,
                holds: rank_f[l] <= bound,
            }
        })
        .collect();
    let iterated: Vec<IteratedBound> = (1..=k)
        .map(|l| {
            let bound = rank_w[l - 1] + k - l + 1;
            IteratedBound {
                from_layer: l,
                bound,
                holds: rank_f[k] <= bound,
            }
        })
        .collect();
    let holds = layers.iter().all(|l| l.holds) && iterated.iter().all(|b| b.holds);
    Ok(LinearRankBound { layers, iterated, holds })
}
