//! C ABI over `aipw_lab`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` and
//! released by the matching `*_free`. Every fallible call returns an
//! [`AipwStatus`]; on failure a message is available from
//! [`aipw_last_error`] on the same thread until the next failing call.
//! Panics are caught and reported as [`AipwStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use aipw_lab::bounds::{self, BoundInputs};
use aipw_lab::estimators::{self, ArmReports, EstimateReport};
use aipw_lab::harness::{self, RunOptions, ScenarioConfig, ScenarioResult};
use aipw_lab::learners::linear::HcVariant;
use aipw_lab::learners::LearnerSpec;
use aipw_lab::{Dataset, Error, PropensitySpec};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AipwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    ArmEmpty = 3,
    SingularDesign = 4,
    LearnerFailed = 5,
    NonfiniteValue = 6,
    UnequalFolds = 7,
    GuardViolated = 8,
    ScenarioFailed = 9,
    Io = 10,
    NotFound = 11,
    Panic = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> AipwStatus {
    match e {
        Error::InvalidInput(_) => AipwStatus::InvalidInput,
        Error::ArmEmpty { .. } | Error::TrainingArmEmpty => AipwStatus::ArmEmpty,
        Error::SingularDesign => AipwStatus::SingularDesign,
        Error::LearnerFailed(_) => AipwStatus::LearnerFailed,
        Error::NonfiniteValue => AipwStatus::NonfiniteValue,
        Error::UnequalFolds => AipwStatus::UnequalFolds,
        Error::SubgaussianGuard => AipwStatus::GuardViolated,
        Error::Scenario(_) => AipwStatus::ScenarioFailed,
        Error::Io { .. } => AipwStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (AipwStatus, String)>) -> AipwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AipwStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            AipwStatus::Panic
        }
    }
}

fn lib(e: Error) -> (AipwStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AipwStatus, String) {
    (AipwStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (AipwStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (AipwStatus::InvalidInput, format!("{what} is not UTF-8")))
}

fn json<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T, (AipwStatus, String)> {
    serde_json::from_str(s).map_err(|e| (AipwStatus::InvalidInput, format!("{what}: {e}")))
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn aipw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn aipw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opaque trial dataset.
pub struct AipwDataset(Dataset);

/// Opaque simulation result.
pub struct AipwScenarioResult(ScenarioResult, ScenarioConfig);

/// One estimate with its Wald interval.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AipwEstimate {
    pub point: f64,
    pub variance_est: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Estimates of both arm means and the ATE.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AipwArmEstimates {
    pub mean1: AipwEstimate,
    pub mean0: AipwEstimate,
    pub ate: AipwEstimate,
}

/// ATE coverage summary of one estimator.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AipwCoverage {
    pub runs: usize,
    pub failures: usize,
    pub coverage: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub mean_var_est: f64,
    pub mc_scaled_var: f64,
}

impl From<&EstimateReport> for AipwEstimate {
    fn from(r: &EstimateReport) -> Self {
        Self { point: r.point, variance_est: r.variance_est, se: r.se, ci_low: r.ci_low, ci_high: r.ci_high }
    }
}

impl From<&ArmReports> for AipwArmEstimates {
    fn from(r: &ArmReports) -> Self {
        Self { mean1: (&r.mean1).into(), mean0: (&r.mean0).into(), ate: (&r.ate).into() }
    }
}

/// Builds a dataset from row-major covariates `x` (`n × p`), treatment
/// indicators `a` (0 or 1) and outcomes `y`, with constant propensity `pi1`.
///
/// # Safety
/// `x` must point to `n * p` doubles, `a` to `n` bytes, `y` to `n` doubles,
/// and `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn aipw_dataset_new(
    x: *const f64,
    a: *const u8,
    y: *const f64,
    n: usize,
    p: usize,
    pi1: f64,
    out: *mut *mut AipwDataset,
) -> AipwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if (x.is_null() && n * p > 0) || a.is_null() || y.is_null() {
            return Err(null("data"));
        }
        let xs = if n * p == 0 { Vec::new() } else { std::slice::from_raw_parts(x, n * p).to_vec() };
        let a = std::slice::from_raw_parts(a, n).to_vec();
        let y = std::slice::from_raw_parts(y, n).to_vec();
        let pi = PropensitySpec::constant(pi1).map_err(lib)?;
        let ds = Dataset::from_columns(p, xs, a, y, pi).map_err(lib)?;
        *out = Box::into_raw(Box::new(AipwDataset(ds)));
        Ok(())
    })
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `ds` must come from [`aipw_dataset_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn aipw_dataset_free(ds: *mut AipwDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of rows of a dataset, or 0 for null.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn aipw_dataset_len(ds: *const AipwDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

/// Inverse probability weighting estimates.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aipw_estimate_ipw(
    ds: *const AipwDataset,
    alpha: f64,
    out: *mut AipwArmEstimates,
) -> AipwStatus {
    guard(|| {
        let d = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = (&estimators::estimate_ipw(&d.0, alpha).map_err(lib)?).into();
        Ok(())
    })
}

/// ANCOVA ATE estimate; `hc` is 0, 1 or 3 for HC0, HC1 or HC3.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aipw_estimate_ancova(
    ds: *const AipwDataset,
    alpha: f64,
    hc: u32,
    out: *mut AipwEstimate,
) -> AipwStatus {
    guard(|| {
        let d = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let hc = match hc {
            0 => HcVariant::HC0,
            1 => HcVariant::HC1,
            3 => HcVariant::HC3,
            other => return Err((AipwStatus::InvalidInput, format!("hc must be 0, 1 or 3, got {other}"))),
        };
        *out = (&estimators::estimate_ancova(&d.0, alpha, hc).map_err(lib)?).into();
        Ok(())
    })
}

/// AIPW with the outcome model fitted on the full data. `learner_json` is a
/// learner spec such as `{"kind":"ols"}`.
///
/// # Safety
/// `ds` must be a live dataset handle, `learner_json` a NUL-terminated
/// string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aipw_estimate_aipw(
    ds: *const AipwDataset,
    learner_json: *const c_char,
    seed: u64,
    alpha: f64,
    out: *mut AipwArmEstimates,
) -> AipwStatus {
    guard(|| {
        let d = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let spec: LearnerSpec = json(str_arg(learner_json, "learner_json")?, "learner_json")?;
        spec.validate().map_err(lib)?;
        let q = spec.fit(&d.0, seed).map_err(lib)?;
        *out = (&estimators::estimate_aipw(&d.0, &q, alpha).map_err(lib)?).into();
        Ok(())
    })
}

/// Cross-fit AIPW with `k` folds.
///
/// # Safety
/// As for [`aipw_estimate_aipw`].
#[no_mangle]
pub unsafe extern "C" fn aipw_estimate_crossfit(
    ds: *const AipwDataset,
    learner_json: *const c_char,
    k: usize,
    seed: u64,
    alpha: f64,
    out: *mut AipwArmEstimates,
) -> AipwStatus {
    guard(|| {
        let d = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let spec: LearnerSpec = json(str_arg(learner_json, "learner_json")?, "learner_json")?;
        spec.validate().map_err(lib)?;
        *out = (&estimators::estimate_aipw_crossfit(&d.0, &spec, k, seed, alpha).map_err(lib)?).into();
        Ok(())
    })
}

/// Runs a scenario given as JSON. With `oracle` set, oracle variances are
/// computed as well.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aipw_scenario_run(
    config_json: *const c_char,
    oracle: bool,
    out: *mut *mut AipwScenarioResult,
) -> AipwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: ScenarioConfig = json(str_arg(config_json, "config_json")?, "config_json")?;
        let res = harness::run_scenario(&cfg, &RunOptions { oracle, progress: None }).map_err(lib)?;
        *out = Box::into_raw(Box::new(AipwScenarioResult(res, cfg)));
        Ok(())
    })
}

/// Releases a scenario result; null is ignored.
///
/// # Safety
/// `res` must come from [`aipw_scenario_run`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn aipw_scenario_result_free(res: *mut AipwScenarioResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Coverage summary of the named estimator.
///
/// # Safety
/// `res` must be a live result handle, `estimator` a NUL-terminated string
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aipw_scenario_coverage(
    res: *const AipwScenarioResult,
    estimator: *const c_char,
    out: *mut AipwCoverage,
) -> AipwStatus {
    guard(|| {
        let r = res.as_ref().ok_or_else(|| null("result"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let name = str_arg(estimator, "estimator")?;
        let c = r.0.coverage_for(name).ok_or_else(|| (AipwStatus::NotFound, format!("no estimator named {name:?}")))?;
        *out = AipwCoverage {
            runs: c.runs,
            failures: c.failures,
            coverage: c.coverage,
            wilson_low: c.wilson_low,
            wilson_high: c.wilson_high,
            mean_var_est: c.mean_var_est,
            mc_scaled_var: c.mc_scaled_var,
        };
        Ok(())
    })
}

/// Oracle variance `σ#²` of the named estimator; requires a result run with
/// `oracle` set.
///
/// # Safety
/// As for [`aipw_scenario_coverage`], with `out` pointing to one double.
#[no_mangle]
pub unsafe extern "C" fn aipw_scenario_sigma_hash_sq(
    res: *const AipwScenarioResult,
    estimator: *const c_char,
    out: *mut f64,
) -> AipwStatus {
    guard(|| {
        let r = res.as_ref().ok_or_else(|| null("result"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let name = str_arg(estimator, "estimator")?;
        let o = r.0.oracle_for(name).ok_or_else(|| (AipwStatus::NotFound, format!("no oracle values for {name:?}")))?;
        *out = o.sigma_hash_sq;
        Ok(())
    })
}

/// Writes estimates.csv and coverage.csv (plus variance.csv and qq.csv when
/// oracle values exist) into `dir`.
///
/// # Safety
/// `res` must be a live result handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn aipw_scenario_write_csv(res: *const AipwScenarioResult, dir: *const c_char) -> AipwStatus {
    guard(|| {
        let r = res.as_ref().ok_or_else(|| null("result"))?;
        let dir = Path::new(str_arg(dir, "dir")?);
        r.0.estimates_table(&r.1).write_csv(&dir.join("estimates.csv")).map_err(lib)?;
        r.0.coverage_table().write_csv(&dir.join("coverage.csv")).map_err(lib)?;
        if r.0.oracle.is_some() {
            r.0.variance_table().write_csv(&dir.join("variance.csv")).map_err(lib)?;
            r.0.qq_table().map_err(lib)?.write_csv(&dir.join("qq.csv")).map_err(lib)?;
        }
        Ok(())
    })
}

/// Wilson score interval.
///
/// # Safety
/// `low` and `high` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aipw_wilson_interval(
    successes: usize,
    trials: usize,
    level: f64,
    low: *mut f64,
    high: *mut f64,
) -> AipwStatus {
    guard(|| {
        let (lo, hi) = (low.as_mut().ok_or_else(|| null("low"))?, high.as_mut().ok_or_else(|| null("high"))?);
        (*lo, *hi) = harness::wilson_interval(successes, trials, level).map_err(lib)?;
        Ok(())
    })
}

/// K-rate factor; `n = 0` leaves out the `n` power.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aipw_k_rate_factor(
    k: usize,
    r: f64,
    subgaussian: bool,
    n: usize,
    out: *mut f64,
) -> AipwStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = bounds::k_rate_factor(k, r, subgaussian, (n > 0).then_some(n)).map_err(lib)?;
        Ok(())
    })
}

/// Total of the cross-fit (`cross_fit` set) or non-cross-fit bound for
/// inputs given as JSON.
///
/// # Safety
/// `inputs_json` must be a NUL-terminated string and `total` writable.
#[no_mangle]
pub unsafe extern "C" fn aipw_bound_total(inputs_json: *const c_char, cross_fit: bool, total: *mut f64) -> AipwStatus {
    guard(|| {
        let total = total.as_mut().ok_or_else(|| null("total"))?;
        let inp: BoundInputs = json(str_arg(inputs_json, "inputs_json")?, "inputs_json")?;
        let rep = if cross_fit { bounds::cv_bound_terms(&inp) } else { bounds::noncv_bound_terms(&inp) };
        *total = rep.map_err(lib)?.total;
        Ok(())
    })
}
