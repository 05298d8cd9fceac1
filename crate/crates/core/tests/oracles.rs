//! Frozen reference values. Scalars were evaluated at 40 significant digits with an
//! independent arbitrary-precision library; matrix examples are checked exactly.

use approx::assert_relative_eq;
use losscape::autodiff::{
    backward, block_hessian, check_nondegenerate, gradient_fd, FdStep, NondegeneracyThreshold, ParamVector,
    TrainingProblem,
};
use losscape::linalg::{determinant, numerical_rank, principal_submatrix, Matrix, RankTolerance};
use losscape::losses::{l1, l2, squared_hinge, LabeledDataset, Loss, RegressionLossKind};
use losscape::model::{forward, ActivationKind, Architecture, NetworkParams};

const SIGMOID_1: f64 = 0.731_058_578_630_004_9;
const SIGMOID_M10: f64 = 4.539_786_870_243_439_5e-5;
const LN2: f64 = 0.693_147_180_559_945_3;
const GOLDEN_CONJUGATE: f64 = 0.618_033_988_749_894_8;

fn hessian_x() -> Matrix {
    Matrix::from_diagonal(&[1.0, 1.0, 0.0, 0.0]).unwrap()
}

fn hessian_y() -> Matrix {
    Matrix::from_rows(&[
        vec![1.0, 0.0, 1.0, 0.0],
        vec![0.0, 1.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0],
    ])
    .unwrap()
}

#[test]
fn activation_values() {
    let sp = ActivationKind::Softplus { alpha: 1.0 };
    assert_relative_eq!(sp.value(0.0), LN2, max_relative = 1e-15);
    assert_eq!(sp.derivative(0.0), 0.5);
    let sp4 = ActivationKind::Softplus { alpha: 4.0 };
    assert_relative_eq!(sp4.value(0.3), 0.365_820_616_834_507_8, max_relative = 1e-14);
    assert_relative_eq!(sp4.derivative(0.3), 0.768_524_783_499_017_6, max_relative = 1e-14);
    assert_relative_eq!(ActivationKind::Tanh.value(1.0), 0.761_594_155_955_764_9, max_relative = 1e-15);
    assert_relative_eq!(ActivationKind::Tanh.derivative(1.0), 0.419_974_341_614_026_07, max_relative = 1e-14);
    assert_relative_eq!(ActivationKind::Sigmoid.value(-10.0), SIGMOID_M10, max_relative = 1e-15);
}

#[test]
fn single_layer_forward() {
    let arch = Architecture::new(vec![1, 1], ActivationKind::Sigmoid).unwrap();
    let p = NetworkParams::new(arch, vec![Matrix::identity(1)], vec![vec![0.0]]).unwrap();
    let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    let f = forward(&p, &x).unwrap();
    assert_eq!(f.output().get(0, 0), 0.5);
    assert_relative_eq!(f.output().get(1, 0), SIGMOID_1, max_relative = 1e-15);
}

#[test]
fn regression_loss_values() {
    let (v, d) = RegressionLossKind::PseudoHuber { delta: 1.0 }.eval(1.0);
    assert_relative_eq!(v, 0.828_427_124_746_190_1, max_relative = 1e-14);
    assert_relative_eq!(d, std::f64::consts::SQRT_2, max_relative = 1e-14);
    let (v, d) = RegressionLossKind::BlakeZisserman { delta: 0.1 }.eval(0.5);
    assert_relative_eq!(v, 0.129_197_047_403_115_7, max_relative = 1e-13);
    assert_relative_eq!(d, 0.886_208_567_486_136_7, max_relative = 1e-13);
    let (v, d) = RegressionLossKind::Cauchy { delta: 1.0 }.eval(2.0);
    assert_relative_eq!(v, 1.609_437_912_434_100_3, max_relative = 1e-14);
    assert_relative_eq!(d, 0.8, max_relative = 1e-14);
    let (v, d) = RegressionLossKind::CorruptedGaussian { alpha: 0.5, w: 2.0 }.eval(1.0);
    assert_relative_eq!(v, 0.971_169_614_296_982_2, max_relative = 1e-13);
    assert_relative_eq!(d, 1.228_685_933_421_077_9, max_relative = 1e-13);
}

#[test]
fn separable_loss_pair() {
    assert_eq!(l1(-2.0), (4.0, -4.0));
    assert_eq!(l1(3.0), (0.0, 0.0));
    assert_eq!(l2(2.0), (4.0, 4.0));
    assert_eq!(l2(-1.0), (0.0, 0.0));
    // f = 0 against +1 and −1 targets
    let f = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
    let y = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
    assert_eq!(l1(0.0 - 1.0).0, 1.0);
    assert_eq!(l2(0.0 + 1.0).0, 1.0);
    assert_eq!(squared_hinge(&f, &y).unwrap(), 2.0);
}

#[test]
fn single_sample_objective_and_delta() {
    let arch = Architecture::new(vec![1, 1], ActivationKind::Sigmoid).unwrap();
    let p = NetworkParams::zeros(&arch);
    let x = Matrix::from_rows(&[vec![0.3]]).unwrap();
    let data = LabeledDataset::regression(x, Matrix::zeros(1, 1)).unwrap();
    let loss = Loss::regression(RegressionLossKind::Squared);
    let cache = forward(&p, data.x()).unwrap();
    assert_eq!(losscape::losses::objective(&p, &data, &loss).unwrap(), 0.25);
    let back = backward(&cache, &p, &data, &loss).unwrap();
    assert_eq!(back.delta(1).get(0, 0), 0.25);
}

#[test]
fn construction_determinant() {
    let m = Matrix::from_rows(&[vec![0.5, 1.0], vec![SIGMOID_M10, 1.0]]).unwrap();
    assert_relative_eq!(determinant(&m).unwrap(), 0.499_954_602_131_297_56, max_relative = 1e-15);
    assert_eq!(numerical_rank(&m, RankTolerance::Auto), 2);
}

#[test]
fn four_by_four_hessian_examples() {
    let tau = NondegeneracyThreshold::Absolute(1e-6);
    let hx = hessian_x();
    let hy = hessian_y();
    assert_eq!(determinant(&hx).unwrap(), 0.0);
    assert!(determinant(&hy).unwrap() != 0.0);
    assert!(!check_nondegenerate(&hx, tau).unwrap().nondegenerate);
    let hx12 = principal_submatrix(&hx, &[0, 1]).unwrap();
    assert_eq!(hx12, Matrix::identity(2));
    assert!(check_nondegenerate(&hx12, tau).unwrap().nondegenerate);
    assert_eq!(principal_submatrix(&hx, &[2, 3]).unwrap(), Matrix::zeros(2, 2));
    let full = check_nondegenerate(&hy, tau).unwrap();
    assert!(full.nondegenerate);
    assert_relative_eq!(full.margin, GOLDEN_CONJUGATE, max_relative = 1e-14);
    let hy34 = principal_submatrix(&hy, &[2, 3]).unwrap();
    assert_eq!(hy34, Matrix::zeros(2, 2));
    assert!(!check_nondegenerate(&hy34, tau).unwrap().nondegenerate);
}

#[test]
fn central_difference_error_is_second_order() {
    let f = |t: &[f64]| t[0].powi(3);
    let err = |h: f64| (gradient_fd(&f, &[1.0], FdStep::Absolute(h)).unwrap()[0] - 3.0).abs();
    let ratio = err(1e-2) / err(1e-3);
    assert!((ratio - 100.0).abs() < 1.0, "ratio {ratio}");
}

#[test]
fn output_block_hessian_matches_dense_submatrix() {
    let x = Matrix::from_rows(&[vec![0.1, 0.9], vec![-0.4, 0.3], vec![0.8, -0.7]]).unwrap();
    let y = Matrix::from_rows(&[vec![0.3], vec![0.6], vec![0.45]]).unwrap();
    let arch = Architecture::new(vec![2, 3, 1], ActivationKind::Sigmoid).unwrap();
    let problem = TrainingProblem::new(
        arch.clone(),
        LabeledDataset::regression(x, y).unwrap(),
        Loss::regression(RegressionLossKind::Squared),
    )
    .unwrap();
    let run = losscape::trainer::train(&problem, &losscape::trainer::TrainConfig::default()).unwrap();
    let theta = ParamVector::from_params(&run.params).flat;
    let f = |t: &[f64]| problem.objective(t);
    let all: Vec<usize> = (0..theta.len()).collect();
    let dense = block_hessian(&f, &theta, &all, FdStep::hessian()).unwrap().matrix;
    let out: Vec<usize> = problem.layout().layer(2).collect();
    let block = block_hessian(&f, &theta, &out, FdStep::hessian()).unwrap().matrix;
    let sub = principal_submatrix(&dense, &out).unwrap();
    let diff = block.sub(&sub).unwrap().frobenius_norm();
    assert!(diff <= 1e-3 * sub.frobenius_norm(), "{diff}");
}
