//! Steepest descent with backtracking, used to reach numerically critical points.
//!
//! The accepted step is multiplied by `step_growth` before the next line search, so the
//! step adapts upward on flat tails (e.g. the separable loss) and downward on curved
//! regions. Every accepted step satisfies the sufficient-decrease test, which keeps the
//! recorded objective non-increasing.

use crate::autodiff::{norm2, ParamVector, TrainingProblem};
use crate::error::{Error, Result};
use crate::losses::{LabeledDataset, Loss};
use crate::model::NetworkParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub eps_crit: f64,
    pub initial_step: f64,
    /// Backtracking factor in `(0, 1)`.
    pub shrink: f64,
    /// Armijo constant in `(0, 0.5]`.
    pub sufficient_decrease: f64,
    /// Factor `≥ 1` applied to the accepted step before the next search.
    pub step_growth: f64,
    /// Line search gives up (status `stalled`) below this step.
    pub min_step: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            eps_crit: 1e-7,
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            step_growth: 2.0,
            min_step: 1e-20,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("eps_crit", self.eps_crit)?;
        positive("initial_step", self.initial_step)?;
        positive("min_step", self.min_step)?;
        positive("init_scale", self.init_scale)?;
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid(format!("shrink must lie in (0, 1), got {}", self.shrink)));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease <= 0.5) {
            return Err(Error::invalid(format!(
                "sufficient_decrease must lie in (0, 0.5], got {}",
                self.sufficient_decrease
            )));
        }
        if !(self.step_growth.is_finite() && self.step_growth >= 1.0) {
            return Err(Error::invalid(format!("step_growth must be at least 1, got {}", self.step_growth)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Converged,
    #[serde(rename = "maxiter")]
    MaxIter,
    Diverged,
    Stalled,
}

impl TrainStatus {
    pub fn name(&self) -> &'static str {
        match self {
            TrainStatus::Converged => "converged",
            TrainStatus::MaxIter => "maxiter",
            TrainStatus::Diverged => "diverged",
            TrainStatus::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    /// Accepted step; 0 for the starting point.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub status: TrainStatus,
    pub history: Vec<HistoryEntry>,
}

impl Minimized {
    pub fn iterations(&self) -> usize {
        self.history.last().map_or(0, |h| h.iteration)
    }
}

/// Smooth objective on `ℝ^p`.
pub trait Objective {
    fn value(&self, theta: &[f64]) -> f64;
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl Objective for TrainingProblem {
    fn value(&self, theta: &[f64]) -> f64 {
        self.objective(theta)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        TrainingProblem::value_and_gradient(self, theta)
    }
}

/// Adapts a closure returning `(Φ, ∇Φ)`.
pub struct FnObjective<F>(pub F);

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Objective for FnObjective<F> {
    fn value(&self, theta: &[f64]) -> f64 {
        (self.0)(theta).0
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.0)(theta))
    }
}

fn finite_eval<O: Objective + ?Sized>(obj: &O, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    match obj.value_and_gradient(theta) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => Some((v, g)),
        _ => None,
    }
}

pub fn minimize<O: Objective + ?Sized>(obj: &O, theta0: &[f64], cfg: &TrainConfig) -> Result<Minimized> {
    cfg.validate()?;
    let mut theta = theta0.to_vec();
    let Some((mut phi, mut grad)) = finite_eval(obj, &theta) else {
        return Ok(Minimized {
            theta,
            objective: f64::NAN,
            grad_norm: f64::NAN,
            status: TrainStatus::Diverged,
            history: Vec::new(),
        });
    };
    let mut gnorm = norm2(&grad);
    let mut history = vec![HistoryEntry {
        iteration: 0,
        objective: phi,
        grad_norm: gnorm,
        step: 0.0,
    }];
    let mut step = cfg.initial_step;
    let mut trial = vec![0.0; theta.len()];
    let mut status = TrainStatus::MaxIter;

    for iteration in 1..=cfg.max_iters + 1 {
        if gnorm <= cfg.eps_crit {
            status = TrainStatus::Converged;
            break;
        }
        if iteration > cfg.max_iters {
            break;
        }
        let decrease = cfg.sufficient_decrease * gnorm * gnorm;
        let mut t = step;
        let accepted = loop {
            for ((x, th), g) in trial.iter_mut().zip(&theta).zip(&grad) {
                *x = th - t * g;
            }
            let value = obj.value(&trial);
            if value.is_finite() && value <= phi - t * decrease {
                break Some(t);
            }
            t *= cfg.shrink;
            if t < cfg.min_step {
                break None;
            }
        };
        let Some(t) = accepted else {
            status = TrainStatus::Stalled;
            break;
        };
        let Some((next_phi, next_grad)) = finite_eval(obj, &trial) else {
            status = TrainStatus::Diverged;
            break;
        };
        std::mem::swap(&mut theta, &mut trial);
        phi = next_phi;
        grad = next_grad;
        gnorm = norm2(&grad);
        step = t * cfg.step_growth;
        history.push(HistoryEntry {
            iteration,
            objective: phi,
            grad_norm: gnorm,
            step: t,
        });
    }
    Ok(Minimized {
        theta,
        objective: phi,
        grad_norm: gnorm,
        status,
        history,
    })
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: NetworkParams,
    pub result: Minimized,
}

/// Random initialization from `cfg.seed` followed by [`minimize`].
pub fn train(problem: &TrainingProblem, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = NetworkParams::random_init(&problem.arch, cfg.init_scale, &mut rng);
    train_from(problem, &init, cfg)
}

pub fn train_from(problem: &TrainingProblem, init: &NetworkParams, cfg: &TrainConfig) -> Result<TrainRun> {
    let theta0 = ParamVector::from_params(init).flat;
    let result = minimize(problem, &theta0, cfg)?;
    let params = problem.params(&result.theta)?;
    Ok(TrainRun { params, result })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criticality {
    pub critical: bool,
    pub grad_norm: f64,
}

/// `‖∇Φ‖₂ ≤ eps` with the backpropagated gradient.
pub fn is_critical(params: &NetworkParams, data: &LabeledDataset, loss: &Loss, eps: f64) -> Result<Criticality> {
    let grad_norm = crate::autodiff::gradient_norm(params, data, loss)?;
    Ok(Criticality {
        critical: grad_norm <= eps,
        grad_norm,
    })
}

pub fn history_csv(history: &[HistoryEntry]) -> String {
    let mut out = String::from("iteration,objective,grad_norm,step\n");
    for h in history {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            h.iteration,
            crate::io::format_real(h.objective),
            crate::io::format_real(h.grad_norm),
            crate::io::format_real(h.step)
        );
    }
    out
}
