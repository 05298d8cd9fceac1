//! One-vs-rest linear separability certificates.
//!
//! Three routes, tried in order:
//! 1. `[F, 1_N]` has full row rank: solve `[F, 1_N] (a_j; b_j) = t_j` with
//!    `t_ij = ±1` exactly, giving unit margins.
//! 2. Perceptron on the augmented vectors, capped at `max_passes` passes.
//! 3. Phase-one simplex on `t_ij (a_jᵀ f_i + b_j) ≥ 1`: optimum zero yields a witness,
//!    a positive optimum proves that class is not separable.

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, solve_least_squares, Matrix, RankTolerance};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparabilityStatus {
    Separable,
    NotSeparable,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparabilityMethod {
    ExactSolve,
    Perceptron,
    LinearProgram,
}

/// Affine witness `a_jᵀ f + b_j` for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOutcome {
    pub status: SeparabilityStatus,
    pub method: SeparabilityMethod,
    pub witness: Option<Witness>,
    /// `min_i t_ij (a_jᵀ f_i + b_j)` for a witness; minus the phase-one optimum when infeasible.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityCertificate {
    pub status: SeparabilityStatus,
    pub method: SeparabilityMethod,
    pub classes: Vec<ClassOutcome>,
    /// Smallest signed margin over all samples and classes (meaningful when separable).
    pub min_margin: f64,
}

impl SeparabilityCertificate {
    pub fn witnesses(&self) -> Option<Vec<&Witness>> {
        self.classes.iter().map(|c| c.witness.as_ref()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityConfig {
    pub rank_tol: RankTolerance,
    pub max_passes: usize,
    /// Phase-one optimum at or below this counts as feasible.
    pub lp_feasible_tol: f64,
    /// Phase-one optimum at or above this counts as infeasible.
    pub lp_infeasible_tol: f64,
}

impl Default for SeparabilityConfig {
    fn default() -> Self {
        Self {
            rank_tol: RankTolerance::Auto,
            max_passes: 100_000,
            lp_feasible_tol: 1e-9,
            lp_infeasible_tol: 1e-6,
        }
    }
}

fn signed_targets(classes: &[usize], class: usize) -> Vec<f64> {
    classes
        .iter()
        .map(|c| if *c == class { 1.0 } else { -1.0 })
        .collect()
}

fn witness_margin(features: &Matrix, targets: &[f64], w: &Witness) -> f64 {
    (0..features.rows())
        .map(|i| {
            let s: f64 = features.row(i).iter().zip(&w.a).map(|(f, a)| f * a).sum::<f64>() + w.b;
            targets[i] * s
        })
        .fold(f64::INFINITY, f64::min)
}

/// Certificate for rows of `features` with 0-based labels in `[0, num_classes)`.
pub fn check_separability(
    features: &Matrix,
    classes: &[usize],
    num_classes: usize,
    cfg: &SeparabilityConfig,
) -> Result<SeparabilityCertificate> {
    let n = features.rows();
    if classes.len() != n {
        return Err(Error::shape(format!("{} labels for {n} feature rows", classes.len())));
    }
    if num_classes == 0 {
        return Err(Error::invalid("number of classes must be positive"));
    }
    if let Some((i, c)) = classes.iter().enumerate().find(|(_, c)| **c >= num_classes) {
        return Err(Error::invalid(format!(
            "label {} of sample {} outside [1, {num_classes}]",
            c + 1,
            i + 1
        )));
    }
    let augmented = features.append_ones_column();
    let full_row_rank = numerical_rank(&augmented, cfg.rank_tol) == n;

    let outcomes: Vec<ClassOutcome> = (0..num_classes)
        .map(|j| {
            let targets = signed_targets(classes, j);
            if full_row_rank {
                if let Some(o) = exact_solve(&augmented, features, &targets)? {
                    return Ok(o);
                }
            }
            if let Some(o) = perceptron(&augmented, features, &targets, cfg.max_passes) {
                return Ok(o);
            }
            Ok(linear_program(&augmented, features, &targets, cfg))
        })
        .collect::<Result<_>>()?;

    let status = if outcomes.iter().all(|o| o.status == SeparabilityStatus::Separable) {
        SeparabilityStatus::Separable
    } else if outcomes.iter().any(|o| o.status == SeparabilityStatus::NotSeparable) {
        SeparabilityStatus::NotSeparable
    } else {
        SeparabilityStatus::Undetermined
    };
    let method = outcomes
        .iter()
        .map(|o| o.method)
        .max_by_key(|m| match m {
            SeparabilityMethod::ExactSolve => 0,
            SeparabilityMethod::Perceptron => 1,
            SeparabilityMethod::LinearProgram => 2,
        })
        .unwrap_or(SeparabilityMethod::ExactSolve);
    let min_margin = outcomes.iter().map(|o| o.margin).fold(f64::INFINITY, f64::min);
    Ok(SeparabilityCertificate {
        status,
        method,
        classes: outcomes,
        min_margin,
    })
}

fn split_witness(h: &[f64]) -> Witness {
    let (a, b) = h.split_at(h.len() - 1);
    Witness { a: a.to_vec(), b: b[0] }
}

fn exact_solve(augmented: &Matrix, features: &Matrix, targets: &[f64]) -> Result<Option<ClassOutcome>> {
    let rhs = Matrix::from_row_major(targets.len(), 1, targets.to_vec())?;
    let h = solve_least_squares(augmented, &rhs)?;
    let witness = split_witness(h.as_slice());
    let margin = witness_margin(features, targets, &witness);
    if margin > 0.0 {
        Ok(Some(ClassOutcome {
            status: SeparabilityStatus::Separable,
            method: SeparabilityMethod::ExactSolve,
            witness: Some(witness),
            margin,
        }))
    } else {
        Ok(None)
    }
}

fn perceptron(augmented: &Matrix, features: &Matrix, targets: &[f64], max_passes: usize) -> Option<ClassOutcome> {
    let dim = augmented.cols();
    let mut h = vec![0.0; dim];
    for _ in 0..max_passes {
        let mut mistakes = 0;
        for (i, t) in targets.iter().enumerate() {
            let z = augmented.row(i);
            let s: f64 = z.iter().zip(&h).map(|(a, b)| a * b).sum();
            if t * s <= 0.0 {
                mistakes += 1;
                for (hk, zk) in h.iter_mut().zip(z) {
                    *hk += t * zk;
                }
            }
        }
        if mistakes == 0 {
            let witness = split_witness(&h);
            let margin = witness_margin(features, targets, &witness);
            if margin > 0.0 {
                return Some(ClassOutcome {
                    status: SeparabilityStatus::Separable,
                    method: SeparabilityMethod::Perceptron,
                    witness: Some(witness),
                    margin,
                });
            }
        }
    }
    None
}

fn linear_program(augmented: &Matrix, features: &Matrix, targets: &[f64], cfg: &SeparabilityConfig) -> ClassOutcome {
    let (optimum, h) = phase_one(augmented, targets);
    let undetermined = |margin| ClassOutcome {
        status: SeparabilityStatus::Undetermined,
        method: SeparabilityMethod::LinearProgram,
        witness: None,
        margin,
    };
    if optimum <= cfg.lp_feasible_tol {
        let witness = split_witness(&h);
        let margin = witness_margin(features, targets, &witness);
        if margin > 0.0 {
            return ClassOutcome {
                status: SeparabilityStatus::Separable,
                method: SeparabilityMethod::LinearProgram,
                witness: Some(witness),
                margin,
            };
        }
        return undetermined(margin);
    }
    if optimum >= cfg.lp_infeasible_tol {
        return ClassOutcome {
            status: SeparabilityStatus::NotSeparable,
            method: SeparabilityMethod::LinearProgram,
            witness: None,
            margin: -optimum,
        };
    }
    undetermined(-optimum)
}

/// Minimizes the total artificial slack for `t_i z_iᵀ h − s_i = 1`, `s ≥ 0`, `h` free,
/// with a dense tableau and Bland's rule. Returns the optimum and `h`.
fn phase_one(augmented: &Matrix, targets: &[f64]) -> (f64, Vec<f64>) {
    const PIVOT_EPS: f64 = 1e-12;
    let n = augmented.rows();
    let dim = augmented.cols();
    // columns: h⁺ (dim), h⁻ (dim), surplus (n), artificial (n), rhs
    let free = 2 * dim;
    let cols = free + 2 * n + 1;
    let rhs = cols - 1;
    let mut tab = vec![vec![0.0; cols]; n + 1];
    for i in 0..n {
        let row = &mut tab[i];
        for k in 0..dim {
            let coef = targets[i] * augmented.get(i, k);
            row[k] = coef;
            row[dim + k] = -coef;
        }
        row[free + i] = -1.0;
        row[free + n + i] = 1.0;
        row[rhs] = 1.0;
    }
    let mut basis: Vec<usize> = (0..n).map(|i| free + n + i).collect();
    // objective row holds reduced costs of min Σ artificial
    for j in 0..cols {
        if (free + n..free + 2 * n).contains(&j) {
            continue;
        }
        tab[n][j] = -(0..n).map(|i| tab[i][j]).sum::<f64>();
    }

    let max_iters = 50 * (cols + n);
    for _ in 0..max_iters {
        let Some(enter) = (0..rhs).find(|&j| tab[n][j] < -PIVOT_EPS) else {
            break;
        };
        let leave = (0..n)
            .filter(|&i| tab[i][enter] > PIVOT_EPS)
            .map(|i| (i, tab[i][rhs] / tab[i][enter]))
            .fold(None::<(usize, f64)>, |best, (i, ratio)| match best {
                Some((bi, br)) if ratio > br + PIVOT_EPS || (ratio >= br - PIVOT_EPS && basis[i] > basis[bi]) => {
                    Some((bi, br))
                }
                _ => Some((i, ratio)),
            });
        let Some((leave, _)) = leave else {
            break;
        };
        let pivot = tab[leave][enter];
        for v in tab[leave].iter_mut() {
            *v /= pivot;
        }
        let pivot_row = tab[leave].clone();
        for (r, row) in tab.iter_mut().enumerate() {
            if r == leave {
                continue;
            }
            let factor = row[enter];
            if factor != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
            }
        }
        basis[leave] = enter;
    }

    let mut h = vec![0.0; dim];
    for (i, &b) in basis.iter().enumerate() {
        if b < dim {
            h[b] += tab[i][rhs];
        } else if b < free {
            h[b - dim] -= tab[i][rhs];
        }
    }
    let optimum = basis
        .iter()
        .enumerate()
        .filter(|(_, b)| **b >= free + n && **b < free + 2 * n)
        .map(|(i, _)| tab[i][rhs].max(0.0))
        .sum();
    (optimum, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(v: &[f64]) -> Matrix {
        Matrix::from_row_major(v.len(), 1, v.to_vec()).unwrap()
    }

    fn assert_valid_witnesses(f: &Matrix, labels: &[usize], cert: &SeparabilityCertificate) {
        for (j, outcome) in cert.classes.iter().enumerate() {
            let w = outcome.witness.as_ref().unwrap();
            for i in 0..f.rows() {
                let s: f64 = f.row(i).iter().zip(&w.a).map(|(x, a)| x * a).sum::<f64>() + w.b;
                if labels[i] == j {
                    assert!(s > 0.0);
                } else {
                    assert!(s < 0.0);
                }
            }
        }
    }

    #[test]
    fn two_distinct_points_are_separable() {
        let f = column(&[0.0, 1.0]);
        let cert = check_separability(&f, &[0, 1], 2, &SeparabilityConfig::default()).unwrap();
        assert_eq!(cert.status, SeparabilityStatus::Separable);
        assert_eq!(cert.method, SeparabilityMethod::ExactSolve);
        assert!(cert.min_margin >= 1.0 - 1e-9);
        assert_valid_witnesses(&f, &[0, 1], &cert);
    }

    #[test]
    fn middle_point_class_is_not_separable() {
        let f = column(&[0.0, 1.0, 2.0]);
        let labels = [0, 1, 0];
        let cert = check_separability(&f, &labels, 2, &SeparabilityConfig::default()).unwrap();
        assert_eq!(cert.status, SeparabilityStatus::NotSeparable);
        assert_eq!(cert.classes[1].status, SeparabilityStatus::NotSeparable);
        assert!(cert.classes[1].margin < 0.0);
    }

    #[test]
    fn separable_without_full_row_rank_uses_perceptron() {
        let f = column(&[0.0, 1.0, 2.0, 3.0]);
        let labels = [0, 0, 1, 1];
        let cert = check_separability(&f, &labels, 2, &SeparabilityConfig::default()).unwrap();
        assert_eq!(cert.status, SeparabilityStatus::Separable);
        assert_eq!(cert.method, SeparabilityMethod::Perceptron);
        assert_valid_witnesses(&f, &labels, &cert);
    }

    #[test]
    fn linear_program_finds_witness_when_perceptron_is_capped() {
        let f = column(&[0.0, 1.0, 2.0, 3.0]);
        let labels = [0, 0, 1, 1];
        let cfg = SeparabilityConfig {
            max_passes: 0,
            ..SeparabilityConfig::default()
        };
        let cert = check_separability(&f, &labels, 2, &cfg).unwrap();
        assert_eq!(cert.status, SeparabilityStatus::Separable);
        assert_eq!(cert.method, SeparabilityMethod::LinearProgram);
        assert!(cert.min_margin >= 1.0 - 1e-9);
        assert_valid_witnesses(&f, &labels, &cert);
    }

    #[test]
    fn xor_is_not_separable() {
        let f = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let cert = check_separability(&f, &[0, 0, 1, 1], 2, &SeparabilityConfig::default()).unwrap();
        assert_eq!(cert.status, SeparabilityStatus::NotSeparable);
    }

    #[test]
    fn full_row_rank_features_always_separable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let f = Matrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let cert = check_separability(&f, &labels, 3, &SeparabilityConfig::default()).unwrap();
            assert_eq!(cert.status, SeparabilityStatus::Separable);
            assert_eq!(cert.method, SeparabilityMethod::ExactSolve);
            assert!(cert.min_margin >= 1.0 - 1e-9);
            assert_valid_witnesses(&f, &labels, &cert);
        }
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let f = column(&[0.0, 1.0]);
        assert!(check_separability(&f, &[0, 2], 2, &SeparabilityConfig::default()).is_err());
        assert!(check_separability(&f, &[0], 2, &SeparabilityConfig::default()).is_err());
    }
}
