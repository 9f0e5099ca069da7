//! C ABI for pdsinfer.
//!
//! Every entry point returns a [`PdsStatus`]. On failure the message is kept
//! per thread and can be read with [`pds_last_error_message`]. Datasets are
//! opaque handles created by [`pds_dataset_new`] and released by
//! [`pds_dataset_free`]. Strings returned by the library are released with
//! [`pds_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};

use pdsinfer::dgp::DesignSpec;
use pdsinfer::hte::{ate_estimate, att_estimate, HteConfig, Link};
use pdsinfer::montecarlo::{run_cell, Estimator};
use pdsinfer::regression::{Dataset, EstimateReport};
use pdsinfer::selection::{
    double_selection, ds_plus_i3, lasso_direct, single_selection_post_lasso, union_ads, EstimatorOptions,
};
use pdsinfer::split::{split_sample_estimate, SplitConfig};
use pdsinfer::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    Numerical = 4,
    NoTreated = 5,
    UnknownName = 6,
    Panic = 7,
}

/// Estimators available through [`pds_estimate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdsMethod {
    Ds = 0,
    PostLasso = 1,
    DsI3 = 2,
    UnionAds = 3,
    Split = 4,
    Lasso = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdsEffectKind {
    Ate = 0,
    Att = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdsLink {
    Linear = 0,
    Logit = 1,
}

/// Point estimate and interval for the treatment coefficient.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PdsEstimate {
    pub alpha_hat: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    /// Number of selected controls.
    pub s_hat: usize,
    /// Selection capped by the degrees-of-freedom guard.
    pub truncated: bool,
    /// Some Lasso did not converge.
    pub nonconverged: bool,
}

/// Average effect (ATE or ATT) and its interval.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PdsEffect {
    pub effect_hat: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    /// Share of treated observations; NaN for the ATE.
    pub mu_hat: f64,
    pub n: usize,
}

/// Opaque dataset handle.
pub struct PdsDataset {
    data: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> PdsStatus {
    match e {
        Error::InvalidArgument(_) | Error::Dimension(_) | Error::Domain(_) => PdsStatus::InvalidArgument,
        Error::NonFinite { .. } | Error::Input(_) | Error::Io(_) | Error::MissingTruth(_) => PdsStatus::InvalidData,
        Error::NoTreated | Error::ArmSize(_) => PdsStatus::NoTreated,
        Error::UnknownDesign(_) | Error::UnknownEstimator(_) => PdsStatus::UnknownName,
        Error::LeverageSingular { .. }
        | Error::DegreesOfFreedom { .. }
        | Error::TreatmentCollinear
        | Error::Separation => PdsStatus::Numerical,
    }
}

struct Failure(PdsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PdsStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PdsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PdsStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PdsStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PdsStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

unsafe fn handle<'a>(h: *const PdsDataset) -> Result<&'a Dataset, Failure> {
    h.as_ref().map(|d| &d.data).ok_or_else(|| null("dataset"))
}

/// Builds a dataset from `n` outcomes, `n` treatments and an `n × p`
/// row-major control matrix. The data are copied.
///
/// # Safety
/// `y` and `d` must point to `n` values, `x` to `n * p` values (or be null
/// when `p == 0`), and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pds_dataset_new(
    y: *const f64,
    d: *const f64,
    x: *const f64,
    n: usize,
    p: usize,
    out: *mut *mut PdsDataset,
) -> PdsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let len = n.checked_mul(p).ok_or_else(|| Failure(PdsStatus::InvalidArgument, "n * p overflows".into()))?;
        let y = slice(y, n, "y")?;
        let d = slice(d, n, "d")?;
        let x = slice(x, len, "x")?;
        let data = Dataset::new(
            DVector::from_column_slice(y),
            DVector::from_column_slice(d),
            DMatrix::from_row_slice(n, p, x),
        )?;
        *out = Box::into_raw(Box::new(PdsDataset { data }));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from [`pds_dataset_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pds_dataset_free(dataset: *mut PdsDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of observations, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pds_dataset_n(dataset: *const PdsDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.n())
}

/// Number of controls, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pds_dataset_p(dataset: *const PdsDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.p())
}

fn to_estimate(r: &EstimateReport) -> PdsEstimate {
    PdsEstimate {
        alpha_hat: r.alpha_hat,
        se: r.se,
        ci_lower: r.ci_lower,
        ci_upper: r.ci_upper,
        level: r.level,
        s_hat: r.s_hat,
        truncated: r.flags.truncated,
        nonconverged: r.flags.nonconverged,
    }
}

/// Estimates the treatment coefficient with `method`. `seed` only affects
/// the split-sample partition. When `selected` is non-null, up to
/// `selected_cap` selected control indices (0-based) are written to it.
///
/// # Safety
/// `dataset` must be a live handle, `out` writable, and `selected` null or
/// writable for `selected_cap` entries.
#[no_mangle]
pub unsafe extern "C" fn pds_estimate(
    dataset: *const PdsDataset,
    method: PdsMethod,
    level: f64,
    intercept: bool,
    seed: u64,
    out: *mut PdsEstimate,
    selected: *mut usize,
    selected_cap: usize,
) -> PdsStatus {
    guard(|| {
        let data = handle(dataset)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = EstimatorOptions { level, intercept, ..Default::default() };
        let report = match method {
            PdsMethod::Ds => double_selection(data, &opts)?,
            PdsMethod::PostLasso => single_selection_post_lasso(data, &opts)?,
            PdsMethod::DsI3 => ds_plus_i3(data, &opts)?,
            PdsMethod::Lasso => lasso_direct(data, &opts)?,
            PdsMethod::UnionAds => union_ads(&double_selection(data, &opts)?, &single_selection_post_lasso(data, &opts)?)?,
            PdsMethod::Split => {
                let cfg = SplitConfig { options: opts, ..Default::default() };
                split_sample_estimate(data, &cfg, seed)?.0
            }
        };
        *out = to_estimate(&report);
        if !selected.is_null() {
            for (k, &j) in report.selected.iter().take(selected_cap).enumerate() {
                *selected.add(k) = j;
            }
        }
        Ok(())
    })
}

/// Average treatment effect (or effect on the treated) for a 0/1 treatment.
///
/// # Safety
/// `dataset` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pds_ate(
    dataset: *const PdsDataset,
    kind: PdsEffectKind,
    link: PdsLink,
    trim: f64,
    level: f64,
    out: *mut PdsEffect,
) -> PdsStatus {
    guard(|| {
        let data = handle(dataset)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if let Some(i) = data.d.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Failure(PdsStatus::InvalidData, format!("treatment must be 0/1; row {} has {}", i + 1, data.d[i])));
        }
        let link = match link {
            PdsLink::Linear => Link::Linear,
            PdsLink::Logit => Link::Logit,
        };
        let cfg = HteConfig { trim_eps: trim, ..Default::default() };
        let r = match kind {
            PdsEffectKind::Ate => ate_estimate(&data.y, &data.d, &data.x, link, &cfg, level)?,
            PdsEffectKind::Att => att_estimate(&data.y, &data.d, &data.x, link, &cfg, level)?,
        };
        *out = PdsEffect {
            effect_hat: r.effect_hat,
            se: r.se,
            ci_lower: r.ci_lower,
            ci_upper: r.ci_upper,
            level: r.level,
            mu_hat: r.mu_hat.unwrap_or(f64::NAN),
            n: r.n,
        };
        Ok(())
    })
}

/// Runs one Monte Carlo cell and returns the summary rows as a JSON array
/// in `out_json`, to be released with [`pds_string_free`]. `estimators` is a
/// comma-separated list of names, or null for all of them.
///
/// # Safety
/// `design` must be a NUL-terminated string, `estimators` null or one, and
/// `out_json` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pds_simulate(
    design: *const c_char,
    n: usize,
    p: usize,
    r2_y: f64,
    r2_d: f64,
    reps: usize,
    seed: u64,
    threads: usize,
    estimators: *const c_char,
    out_json: *mut *mut c_char,
) -> PdsStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        let design = text(design, "design")?.parse()?;
        let ests = if estimators.is_null() {
            Estimator::ALL.to_vec()
        } else {
            Estimator::parse_list(text(estimators, "estimators")?)?
        };
        let mut spec = DesignSpec::new(design).with_r2(r2_y, r2_d).with_size(n, p);
        spec.seed = seed;
        spec.validate()?;
        let rows = run_cell(&spec, &ests, reps, seed, threads.max(1))?;
        let json = serde_json::to_string(&rows).map_err(|e| Failure(PdsStatus::Numerical, e.to_string()))?;
        *out_json = CString::new(json).map_err(|e| Failure(PdsStatus::Numerical, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pds_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn pds_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
