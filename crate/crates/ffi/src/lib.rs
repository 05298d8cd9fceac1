//! C ABI over `losscape`.
//!
//! Every fallible function returns a [`LosscapeStatus`] and writes its result through an
//! out-pointer. On failure the message is available from [`losscape_last_error_message`]
//! on the same thread. Handles are opaque and released with their `_free` function;
//! strings returned through `char **` are released with [`losscape_string_free`].

use losscape::autodiff::{NondegeneracyThreshold, TrainingProblem};
use losscape::certify::{
    certify_independent_inputs, certify_main, certify_nondegenerate_minimum, certify_separable,
    CertificationReport, Tolerances, Verdict,
};
use losscape::linalg::{numerical_rank, Matrix, RankTolerance};
use losscape::losses::{LabeledDataset, Loss, RegressionLossKind};
use losscape::model::{Architecture, NetworkParams};
use losscape::trainer::{train, TrainConfig, TrainStatus};
use losscape::{io, Error};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LosscapeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Precondition = 5,
    Construction = 6,
    Parse = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LosscapeVerdict {
    CertifiedGlobalMinimum = 0,
    ConditionsNotMet = 1,
    NotCritical = 2,
}

/// Certification tolerances. A zero field selects the library default; `rank_tol` and
/// `tau_nd` are absolute thresholds when non-zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosscapeTolerances {
    pub eps_crit: f64,
    pub eps_phi: f64,
    pub rank_tol: f64,
    pub tau_nd: f64,
}

pub struct LosscapeDataset(LabeledDataset);

pub struct LosscapeParams(NetworkParams);

pub struct LosscapeReport(CertificationReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(LosscapeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) => LosscapeStatus::Shape,
            Error::NonFinite(_) => LosscapeStatus::NonFinite,
            Error::InvalidArgument(_) => LosscapeStatus::InvalidArgument,
            Error::Precondition(_) => LosscapeStatus::Precondition,
            Error::ScheduleExhausted { .. } | Error::DirectionSearch(_) => LosscapeStatus::Construction,
            Error::Parse { .. } | Error::Json(_) => LosscapeStatus::Parse,
            Error::Io(_) => LosscapeStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(LosscapeStatus::InvalidArgument, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LosscapeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LosscapeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LosscapeStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(LosscapeStatus::NullPointer, format!("{name} is null")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(LosscapeStatus::NullPointer, format!("{name} is null")))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(LosscapeStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(LosscapeStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("string contains an interior NUL"))
}

unsafe fn loss_arg(spec: *const c_char) -> Result<Loss, Failure> {
    if spec.is_null() {
        return Ok(Loss::regression(RegressionLossKind::Squared));
    }
    losscape::cli::parse_loss(text(spec, "loss")?).map_err(invalid)
}

unsafe fn tolerances(t: *const LosscapeTolerances) -> Tolerances {
    let mut tol = Tolerances::default();
    if let Some(t) = t.as_ref() {
        if t.eps_crit != 0.0 {
            tol.eps_crit = t.eps_crit;
        }
        if t.eps_phi != 0.0 {
            tol.eps_phi = t.eps_phi;
        }
        if t.rank_tol != 0.0 {
            tol.rank_tol = RankTolerance::Absolute(t.rank_tol);
        }
        if t.tau_nd != 0.0 {
            tol.tau_nd = NondegeneracyThreshold::Absolute(t.tau_nd);
        }
    }
    tol
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn losscape_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn losscape_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn losscape_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn losscape_tolerances_default() -> LosscapeTolerances {
    let tol = Tolerances::default();
    LosscapeTolerances {
        eps_crit: tol.eps_crit,
        eps_phi: tol.eps_phi,
        rank_tol: 0.0,
        tau_nd: 0.0,
    }
}

/// Numerical rank of a row-major `rows × cols` matrix. `tol <= 0` selects the automatic
/// cutoff `max(rows, cols) · eps · σ_max`.
///
/// # Safety
/// `values` must point to `rows * cols` doubles; `rank` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_numerical_rank(
    values: *const f64,
    rows: usize,
    cols: usize,
    tol: f64,
    rank: *mut usize,
) -> LosscapeStatus {
    guard(|| {
        let rank = out(rank, "rank")?;
        let len = rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))?;
        let m = Matrix::from_row_major(rows, cols, slice(values, len, "values")?.to_vec())?;
        let tol = if tol > 0.0 { RankTolerance::Absolute(tol) } else { RankTolerance::Auto };
        *rank = numerical_rank(&m, tol);
        Ok(())
    })
}

/// Parses dataset text (header `# d=.. m=.. mode=..` followed by CSV rows).
///
/// # Safety
/// `text` must be a NUL-terminated string; `dataset` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_dataset_parse(text_: *const c_char, dataset: *mut *mut LosscapeDataset) -> LosscapeStatus {
    guard(|| {
        let dataset = out(dataset, "dataset")?;
        *dataset = boxed(LosscapeDataset(io::parse_dataset(text(text_, "text")?)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `dataset` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_dataset_read(path: *const c_char, dataset: *mut *mut LosscapeDataset) -> LosscapeStatus {
    guard(|| {
        let dataset = out(dataset, "dataset")?;
        *dataset = boxed(LosscapeDataset(io::read_dataset(Path::new(text(path, "path")?))?));
        Ok(())
    })
}

/// Regression data from row-major `x` (`n × d`) and `y` (`n × m`).
///
/// # Safety
/// `x` and `y` must point to `n * d` and `n * m` doubles; `dataset` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_dataset_regression(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    m: usize,
    dataset: *mut *mut LosscapeDataset,
) -> LosscapeStatus {
    guard(|| {
        let dataset = out(dataset, "dataset")?;
        let xs = slice(x, n.saturating_mul(d), "x")?;
        let ys = slice(y, n.saturating_mul(m), "y")?;
        let data = LabeledDataset::regression(
            Matrix::from_row_major(n, d, xs.to_vec())?,
            Matrix::from_row_major(n, m, ys.to_vec())?,
        )?;
        *dataset = boxed(LosscapeDataset(data));
        Ok(())
    })
}

/// Classification data from row-major `x` (`n × d`) and 0-based labels in `[0, m)`.
///
/// # Safety
/// `x` must point to `n * d` doubles and `classes` to `n` labels; `dataset` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_dataset_classification(
    x: *const f64,
    n: usize,
    d: usize,
    classes: *const usize,
    m: usize,
    dataset: *mut *mut LosscapeDataset,
) -> LosscapeStatus {
    guard(|| {
        let dataset = out(dataset, "dataset")?;
        let xs = slice(x, n.saturating_mul(d), "x")?;
        let labels = slice(classes, n, "classes")?;
        let data = LabeledDataset::classification(Matrix::from_row_major(n, d, xs.to_vec())?, labels.to_vec(), m)?;
        *dataset = boxed(LosscapeDataset(data));
        Ok(())
    })
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn losscape_dataset_len(dataset: *const LosscapeDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dataset` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn losscape_dataset_free(dataset: *mut LosscapeDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `json` must be a NUL-terminated string; `params` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_params_parse(json: *const c_char, params: *mut *mut LosscapeParams) -> LosscapeStatus {
    guard(|| {
        let params = out(params, "params")?;
        *params = boxed(LosscapeParams(io::params_from_json(text(json, "json")?)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `params` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_params_read(path: *const c_char, params: *mut *mut LosscapeParams) -> LosscapeStatus {
    guard(|| {
        let params = out(params, "params")?;
        *params = boxed(LosscapeParams(io::read_params(Path::new(text(path, "path")?))?));
        Ok(())
    })
}

/// # Safety
/// `params` must be a live handle; `json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_params_to_json(params: *const LosscapeParams, json: *mut *mut c_char) -> LosscapeStatus {
    guard(|| {
        let json = out(json, "json")?;
        *json = owned_string(io::params_to_json(&handle(params, "params")?.0)?)?;
        Ok(())
    })
}

/// # Safety
/// `params` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn losscape_params_free(params: *mut LosscapeParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Steepest descent from a seeded random initialization. `activation` uses the CLI
/// syntax (`sigmoid`, `tanh`, `softplus:4`); `loss` may be NULL for squared loss;
/// `max_iters == 0` keeps the default. `converged` may be NULL.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `params` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_train(
    dataset: *const LosscapeDataset,
    widths: *const usize,
    n_widths: usize,
    activation: *const c_char,
    loss: *const c_char,
    seed: u64,
    max_iters: usize,
    params: *mut *mut LosscapeParams,
    converged: *mut bool,
) -> LosscapeStatus {
    guard(|| {
        let params = out(params, "params")?;
        let data = &handle(dataset, "dataset")?.0;
        let act = losscape::cli::parse_activation(text(activation, "activation")?).map_err(invalid)?;
        let arch = Architecture::new(slice(widths, n_widths, "widths")?.to_vec(), act)?;
        let problem = TrainingProblem::new(arch, data.clone(), loss_arg(loss)?)?;
        let defaults = TrainConfig::default();
        let cfg = TrainConfig {
            seed,
            max_iters: if max_iters == 0 { defaults.max_iters } else { max_iters },
            ..defaults
        };
        let run = train(&problem, &cfg)?;
        if let Some(c) = converged.as_mut() {
            *c = run.result.status == TrainStatus::Converged;
        }
        *params = boxed(LosscapeParams(run.params));
        Ok(())
    })
}

fn finish(report: *mut *mut LosscapeReport, r: CertificationReport) {
    // SAFETY: callers checked `report` for NULL through `out`.
    unsafe { *report = boxed(LosscapeReport(r)) };
}

/// # Safety
/// Handles must be live; `loss` may be NULL; `tol` may be NULL; `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_certify_independent_inputs(
    params: *const LosscapeParams,
    dataset: *const LosscapeDataset,
    loss: *const c_char,
    tol: *const LosscapeTolerances,
    report: *mut *mut LosscapeReport,
) -> LosscapeStatus {
    guard(|| {
        out(report, "report")?;
        let r = certify_independent_inputs(
            &handle(params, "params")?.0,
            &handle(dataset, "dataset")?.0,
            &loss_arg(loss)?,
            &tolerances(tol),
        )?;
        finish(report, r);
        Ok(())
    })
}

/// Wide layer `k` with a non-degenerate Hessian block over the 1-based layers in `subset`.
///
/// # Safety
/// Handles must be live; `subset` must point to `subset_len` entries; `loss` and `tol`
/// may be NULL; `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_certify_main(
    params: *const LosscapeParams,
    dataset: *const LosscapeDataset,
    loss: *const c_char,
    k: usize,
    subset: *const usize,
    subset_len: usize,
    tol: *const LosscapeTolerances,
    report: *mut *mut LosscapeReport,
) -> LosscapeStatus {
    guard(|| {
        out(report, "report")?;
        let r = certify_main(
            &handle(params, "params")?.0,
            &handle(dataset, "dataset")?.0,
            &loss_arg(loss)?,
            k,
            slice(subset, subset_len, "subset")?,
            &tolerances(tol),
        )?;
        finish(report, r);
        Ok(())
    })
}

/// # Safety
/// Handles must be live; `loss` and `tol` may be NULL; `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_certify_nondegenerate_minimum(
    params: *const LosscapeParams,
    dataset: *const LosscapeDataset,
    loss: *const c_char,
    k: usize,
    tol: *const LosscapeTolerances,
    report: *mut *mut LosscapeReport,
) -> LosscapeStatus {
    guard(|| {
        out(report, "report")?;
        let r = certify_nondegenerate_minimum(
            &handle(params, "params")?.0,
            &handle(dataset, "dataset")?.0,
            &loss_arg(loss)?,
            k,
            &tolerances(tol),
        )?;
        finish(report, r);
        Ok(())
    })
}

/// Separable loss with linearly separable features at layer `k` (0 for the raw inputs).
///
/// # Safety
/// Handles must be live; `tol` may be NULL; `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_certify_separable(
    params: *const LosscapeParams,
    dataset: *const LosscapeDataset,
    k: usize,
    tol: *const LosscapeTolerances,
    report: *mut *mut LosscapeReport,
) -> LosscapeStatus {
    guard(|| {
        out(report, "report")?;
        let r = certify_separable(&handle(params, "params")?.0, &handle(dataset, "dataset")?.0, k, &tolerances(tol))?;
        finish(report, r);
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle; `verdict` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_report_verdict(
    report: *const LosscapeReport,
    verdict: *mut LosscapeVerdict,
) -> LosscapeStatus {
    guard(|| {
        let verdict = out(verdict, "verdict")?;
        *verdict = match handle(report, "report")?.0.verdict {
            Verdict::CertifiedGlobalMinimum => LosscapeVerdict::CertifiedGlobalMinimum,
            Verdict::ConditionsNotMet => LosscapeVerdict::ConditionsNotMet,
            Verdict::NotCritical => LosscapeVerdict::NotCritical,
        };
        Ok(())
    })
}

/// Gradient norm and objective value at the certified point. Either output may be NULL.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn losscape_report_values(
    report: *const LosscapeReport,
    grad_norm: *mut f64,
    objective: *mut f64,
) -> LosscapeStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        if let Some(g) = grad_norm.as_mut() {
            *g = r.grad_norm.0;
        }
        if let Some(o) = objective.as_mut() {
            *o = r.objective.0;
        }
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle; `json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn losscape_report_to_json(report: *const LosscapeReport, json: *mut *mut c_char) -> LosscapeStatus {
    guard(|| {
        let json = out(json, "json")?;
        *json = owned_string(handle(report, "report")?.0.to_json())?;
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn losscape_report_free(report: *mut LosscapeReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
