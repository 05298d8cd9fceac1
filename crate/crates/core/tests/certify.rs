use losscape::autodiff::TrainingProblem;
use losscape::certify::{
    certify_independent_inputs, certify_main, certify_nondegenerate_minimum, certify_separable, Tolerances, Verdict,
};
use losscape::linalg::Matrix;
use losscape::losses::{LabeledDataset, Loss, RegressionLossKind};
use losscape::model::{ActivationKind, Architecture, NetworkParams};
use losscape::trainer::{train, TrainConfig, TrainRun, TrainStatus};
use losscape::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn regression(n: usize, d: usize, m: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let y = Matrix::from_fn(n, m, |_, _| rng.random_range(0.2..0.8));
    LabeledDataset::regression(x, y).unwrap()
}

fn fit(widths: Vec<usize>, data: &LabeledDataset, seed: u64) -> TrainRun {
    let arch = Architecture::new(widths, ActivationKind::Sigmoid).unwrap();
    let problem = TrainingProblem::new(arch, data.clone(), Loss::regression(RegressionLossKind::Squared)).unwrap();
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    train(&problem, &cfg).unwrap()
}

fn squared() -> Loss {
    Loss::regression(RegressionLossKind::Squared)
}

#[test]
fn independent_inputs_certified_then_broken_by_rank_deficient_weight() {
    let data = regression(4, 5, 1, 11);
    let run = fit(vec![5, 3, 1], &data, 3);
    assert_eq!(run.result.status, TrainStatus::Converged);
    let tol = Tolerances::default();
    let report = certify_independent_inputs(&run.params, &data, &squared(), &tol).unwrap();
    assert_eq!(report.verdict, Verdict::CertifiedGlobalMinimum, "{}", report.to_json());
    assert!(report.objective_gap() <= tol.eps_phi);

    // zero W_2: rank 0, whatever happens to criticality
    let mut broken = run.params.clone();
    broken.weights[1] = Matrix::zeros(3, 1);
    let report = certify_independent_inputs(&broken, &data, &squared(), &tol).unwrap();
    assert_ne!(report.verdict, Verdict::CertifiedGlobalMinimum);
    assert!(!report.condition("full_column_rank_w2").unwrap().satisfied);
}

#[test]
fn random_parameters_are_not_critical() {
    let data = regression(4, 5, 1, 12);
    let arch = Architecture::new(vec![5, 3, 1], ActivationKind::Sigmoid).unwrap();
    let params = NetworkParams::random_init(&arch, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let report = certify_independent_inputs(&params, &data, &squared(), &Tolerances::default()).unwrap();
    assert_eq!(report.verdict, Verdict::NotCritical);
    assert!(!report.conditions[0].satisfied);
}

#[test]
fn main_certificate_on_wide_single_hidden_layer() {
    let data = regression(6, 2, 1, 13);
    let run = fit(vec![2, 5, 1], &data, 1);
    assert_eq!(run.result.status, TrainStatus::Converged);
    let tol = Tolerances::default();
    let report = certify_main(&run.params, &data, &squared(), 1, &[2], &tol).unwrap();
    assert_eq!(report.verdict, Verdict::CertifiedGlobalMinimum, "{}", report.to_json());
    assert!(report.objective.0 <= tol.eps_phi);

    let full = certify_nondegenerate_minimum(&run.params, &data, &squared(), 1, &tol).unwrap();
    assert_eq!(full.theorem, losscape::certify::Theorem::NondegenerateMinimum);
}

#[test]
fn main_certificate_rejects_narrow_layer() {
    let data = regression(6, 2, 1, 13);
    let run = fit(vec![2, 4, 1], &data, 1);
    let report = certify_main(&run.params, &data, &squared(), 1, &[2], &Tolerances::default()).unwrap();
    assert_ne!(report.verdict, Verdict::CertifiedGlobalMinimum);
    let width = report.condition("wide_layer_n1").unwrap();
    assert!(!width.satisfied);
    assert_eq!((width.value.0, width.threshold.0), (4.0, 5.0));
}

#[test]
fn interpolating_deep_block_is_degenerate() {
    // The block over layers 2 and 3 has 31 parameters but rank at most N·m = 6 once the
    // residuals vanish, so the non-degeneracy condition cannot hold.
    let data = regression(6, 2, 1, 14);
    let run = fit(vec![2, 8, 3, 1], &data, 2);
    let report = certify_main(&run.params, &data, &squared(), 1, &[2, 3], &Tolerances::default()).unwrap();
    if report.grad_norm.0 <= Tolerances::default().eps_crit {
        assert_eq!(report.verdict, Verdict::ConditionsNotMet);
        assert!(!report.condition("nondegenerate_block_hessian").unwrap().satisfied);
    } else {
        assert_eq!(report.verdict, Verdict::NotCritical);
    }
}

#[test]
fn main_certificate_subset_must_contain_next_layer() {
    let data = regression(6, 2, 1, 14);
    let arch = Architecture::new(vec![2, 8, 3, 1], ActivationKind::Sigmoid).unwrap();
    let params = NetworkParams::zeros(&arch);
    let err = certify_main(&params, &data, &squared(), 1, &[3], &Tolerances::default()).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)));
}

#[test]
fn separable_raw_inputs() {
    let x = Matrix::from_rows(&[vec![-2.0, -1.0], vec![-1.5, -2.0], vec![2.0, 1.0], vec![1.0, 2.5]]).unwrap();
    let data = LabeledDataset::classification(x, vec![0, 0, 1, 1], 2).unwrap();
    let arch = Architecture::new(vec![2, 2], ActivationKind::Tanh).unwrap();
    let params = NetworkParams::zeros(&arch);
    let report = certify_separable(&params, &data, 0, &Tolerances::default()).unwrap();
    let cond = report.condition("features_separable_f0").unwrap();
    assert!(cond.satisfied);
    assert!(cond.value.0 > 0.0);
    assert_eq!(report.global_min_reference.0, 0.0);
}

#[test]
fn interleaved_classes_on_a_line_are_not_separable() {
    let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
    let data = LabeledDataset::classification(x, vec![0, 1, 0], 2).unwrap();
    let arch = Architecture::new(vec![1, 2], ActivationKind::Tanh).unwrap();
    let params = NetworkParams::zeros(&arch);
    let report = certify_separable(&params, &data, 0, &Tolerances::default()).unwrap();
    assert!(!report.condition("features_separable_f0").unwrap().satisfied);
    assert_ne!(report.verdict, Verdict::CertifiedGlobalMinimum);
}

#[test]
fn report_is_reproducible() {
    let data = regression(6, 2, 1, 13);
    let a = fit(vec![2, 5, 1], &data, 1);
    let b = fit(vec![2, 5, 1], &data, 1);
    let tol = Tolerances::default();
    let ra = certify_main(&a.params, &data, &squared(), 1, &[2], &tol).unwrap();
    let rb = certify_main(&b.params, &data, &squared(), 1, &[2], &tol).unwrap();
    assert_eq!(ra.to_json(), rb.to_json());
}
