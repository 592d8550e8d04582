//! C ABI for the `bayesdid` estimators.
//!
//! Samples and posteriors are opaque handles created and released by this
//! library. Every fallible function returns a [`BdidStatus`]; on failure
//! [`bdid_last_error_message`] describes the error of the calling thread.
//! Matrices are passed row-major (`n` rows of `p` covariates). Panics never
//! cross the boundary and are reported as `BDID_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bayesdid::bayes::{run_algorithm1, run_algorithm2, ATTPosterior, DRBayesConfig};
use bayesdid::data::{to_canonical, DiDSample, PanelDataset};
use bayesdid::estimate::{run_methods, EstimateSettings, Method};
use bayesdid::Error;
use faer::Mat;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DataError = 3,
    EstimationError = 4,
    Panic = 5,
}

/// Standard Gaussian-process sampler.
pub const BDID_METHOD_BAYES: u32 = 0;
/// Double-robust sampler with prior adjustment and posterior correction.
pub const BDID_METHOD_DR_BAYES: u32 = 1;

pub const BDID_BASELINE_OR: u32 = 0;
pub const BDID_BASELINE_DR: u32 = 1;
pub const BDID_BASELINE_IPW_HT: u32 = 2;
pub const BDID_BASELINE_IPW_HAJEK: u32 = 3;

/// Sampler settings; obtain defaults from [`bdid_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BdidConfig {
    pub draws: usize,
    pub c_varsigma: f64,
    pub alpha: f64,
    pub seed: u64,
    pub sample_split: bool,
    pub ridge: f64,
    /// Fixed prior-adjustment scale; NaN selects the data-driven rule.
    pub varsigma_override: f64,
}

/// Point estimate and credible interval of a posterior.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BdidSummary {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    /// Prior-adjustment scale used; 0 for the standard sampler.
    pub varsigma: f64,
    pub draws: usize,
}

/// Frequentist estimate with its standard error and Wald interval.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BdidEstimate {
    pub estimate: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Opaque canonical DiD sample.
pub struct BdidSample(DiDSample);

/// Opaque ATT posterior.
pub struct BdidPosterior(ATTPosterior);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("interior nul removed")));
}

fn status_of(e: &Error) -> BdidStatus {
    match e {
        Error::InvalidInput(_) => BdidStatus::InvalidInput,
        Error::Data { .. } | Error::Io { .. } | Error::DimensionMismatch { .. } | Error::UnusableSample(_) => {
            BdidStatus::DataError
        }
        _ => BdidStatus::EstimationError,
    }
}

fn fail(status: BdidStatus, msg: impl Into<String>) -> BdidStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> BdidStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, turning panics into `BDID_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> BdidStatus) -> BdidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(BdidStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], BdidStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(BdidStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller guarantees `p` points to `len` readable values.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn covariates(x: *const f64, n: usize, p: usize) -> Result<Mat<f64>, BdidStatus> {
    let len = n
        .checked_mul(p)
        .ok_or_else(|| fail(BdidStatus::InvalidInput, "n * p overflows"))?;
    let x = unsafe { slice(x, len, "x") }?;
    Ok(Mat::from_fn(n, p, |i, j| x[i * p + j]))
}

fn to_config(c: &BdidConfig) -> DRBayesConfig {
    DRBayesConfig {
        draws: c.draws,
        c_varsigma: c.c_varsigma,
        alpha: c.alpha,
        seed: c.seed,
        sample_split: c.sample_split,
        ridge: c.ridge,
        varsigma_override: (!c.varsigma_override.is_nan()).then_some(c.varsigma_override),
        ..DRBayesConfig::default()
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn bdid_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Default sampler settings: 5000 draws, `alpha = 0.05`, seed 0.
#[no_mangle]
pub extern "C" fn bdid_config_default() -> BdidConfig {
    let d = DRBayesConfig::default();
    BdidConfig {
        draws: d.draws,
        c_varsigma: d.c_varsigma,
        alpha: d.alpha,
        seed: d.seed,
        sample_split: d.sample_split,
        ridge: d.ridge,
        varsigma_override: f64::NAN,
    }
}

/// Builds a sample from outcome changes `dy`, treatment flags `d` (nonzero
/// means treated) and row-major covariates `x`.
///
/// # Safety
/// `dy` and `d` must point to `n` values and `x` to `n * p` values; `out`
/// must be writable. Release the result with [`bdid_sample_free`].
#[no_mangle]
pub unsafe extern "C" fn bdid_sample_new(
    dy: *const f64,
    d: *const u8,
    x: *const f64,
    n: usize,
    p: usize,
    out: *mut *mut BdidSample,
) -> BdidStatus {
    guard(|| {
        if out.is_null() {
            return fail(BdidStatus::NullPointer, "out is null");
        }
        let build = || -> Result<BdidSample, BdidStatus> {
            let dy = unsafe { slice(dy, n, "dy") }?;
            let d = unsafe { slice(d, n, "d") }?;
            let x = unsafe { covariates(x, n, p) }?;
            DiDSample::new(dy.to_vec(), d.iter().map(|&v| v != 0).collect(), x)
                .map(BdidSample)
                .map_err(from_error)
        };
        match build() {
            Ok(s) => {
                unsafe { *out = Box::into_raw(Box::new(s)) };
                BdidStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Number of units in `sample`, or 0 for null.
///
/// # Safety
/// `sample` must be null or a live handle from [`bdid_sample_new`].
#[no_mangle]
pub unsafe extern "C" fn bdid_sample_len(sample: *const BdidSample) -> usize {
    unsafe { sample.as_ref() }.map_or(0, |s| s.0.n())
}

/// Releases a sample; null is ignored.
///
/// # Safety
/// `sample` must be null or a handle from [`bdid_sample_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bdid_sample_free(sample: *mut BdidSample) {
    if !sample.is_null() {
        drop(unsafe { Box::from_raw(sample) });
    }
}

/// Runs the sampler `method` (`BDID_METHOD_*`).
///
/// # Safety
/// `sample` and `config` must be valid pointers and `out` writable. Release
/// the result with [`bdid_posterior_free`].
#[no_mangle]
pub unsafe extern "C" fn bdid_run(
    sample: *const BdidSample,
    config: *const BdidConfig,
    method: u32,
    out: *mut *mut BdidPosterior,
) -> BdidStatus {
    guard(|| {
        let (Some(sample), Some(config)) = (unsafe { sample.as_ref() }, unsafe { config.as_ref() }) else {
            return fail(BdidStatus::NullPointer, "sample or config is null");
        };
        if out.is_null() {
            return fail(BdidStatus::NullPointer, "out is null");
        }
        let cfg = to_config(config);
        let post = match method {
            BDID_METHOD_BAYES => run_algorithm1(&sample.0, &cfg),
            BDID_METHOD_DR_BAYES => run_algorithm2(&sample.0, &cfg),
            other => return fail(BdidStatus::InvalidInput, format!("unknown method {other}")),
        };
        match post {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(BdidPosterior(p))) };
                BdidStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Writes the point estimate and credible interval to `out`.
///
/// # Safety
/// `post` must be a live posterior handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bdid_posterior_summary(post: *const BdidPosterior, out: *mut BdidSummary) -> BdidStatus {
    guard(|| {
        let Some(post) = (unsafe { post.as_ref() }) else {
            return fail(BdidStatus::NullPointer, "posterior is null");
        };
        if out.is_null() {
            return fail(BdidStatus::NullPointer, "out is null");
        }
        let p = &post.0;
        let summary = BdidSummary {
            point: p.point,
            ci_low: p.ci_low,
            ci_high: p.ci_high,
            alpha: p.alpha,
            varsigma: p.diagnostics.as_ref().map_or(0.0, |d| d.varsigma),
            draws: p.draws.len(),
        };
        unsafe { *out = summary };
        BdidStatus::Ok
    })
}

/// Copies up to `capacity` ATT draws into `buf` and stores the total number
/// of draws in `total`. With a null `buf` only `total` is written.
///
/// # Safety
/// `post` must be a live posterior handle, `total` writable and `buf` null
/// or writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn bdid_posterior_draws(
    post: *const BdidPosterior,
    buf: *mut f64,
    capacity: usize,
    total: *mut usize,
) -> BdidStatus {
    guard(|| {
        let Some(post) = (unsafe { post.as_ref() }) else {
            return fail(BdidStatus::NullPointer, "posterior is null");
        };
        if total.is_null() {
            return fail(BdidStatus::NullPointer, "total is null");
        }
        let draws = &post.0.draws;
        unsafe { *total = draws.len() };
        if !buf.is_null() {
            let k = capacity.min(draws.len());
            unsafe { ptr::copy_nonoverlapping(draws.as_ptr(), buf, k) };
        }
        BdidStatus::Ok
    })
}

/// Releases a posterior; null is ignored.
///
/// # Safety
/// `post` must be null or a handle from [`bdid_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bdid_posterior_free(post: *mut BdidPosterior) {
    if !post.is_null() {
        drop(unsafe { Box::from_raw(post) });
    }
}

fn write_estimate(method: Method, settings: &EstimateSettings, sample: &DiDSample, panel: Option<&PanelDataset>, out: *mut BdidEstimate) -> BdidStatus {
    let outcome = match run_methods(sample, panel, &[method], settings) {
        Ok(mut v) => v.remove(0),
        Err(e) => return from_error(e),
    };
    match outcome {
        Ok(e) => {
            let est = BdidEstimate {
                estimate: e.estimate,
                std_err: e.std_err.unwrap_or(f64::NAN),
                ci_low: e.ci_low,
                ci_high: e.ci_high,
            };
            unsafe { *out = est };
            BdidStatus::Ok
        }
        Err(msg) => fail(BdidStatus::EstimationError, msg),
    }
}

fn settings(alpha: f64, ridge: f64) -> Result<EstimateSettings, BdidStatus> {
    let s = EstimateSettings {
        bayes: DRBayesConfig {
            alpha,
            ridge,
            ..DRBayesConfig::default()
        },
        trim: None,
    };
    s.bayes.validate().map_err(from_error)?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(fail(BdidStatus::InvalidInput, format!("ridge must be >= 0, got {ridge}")));
    }
    Ok(s)
}

/// Runs a frequentist estimator (`BDID_BASELINE_*`) with a logit propensity
/// model penalized by `ridge`, reporting a `1 - alpha` Wald interval.
///
/// # Safety
/// `sample` must be a live sample handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bdid_baseline(
    sample: *const BdidSample,
    baseline: u32,
    alpha: f64,
    ridge: f64,
    out: *mut BdidEstimate,
) -> BdidStatus {
    guard(|| {
        let Some(sample) = (unsafe { sample.as_ref() }) else {
            return fail(BdidStatus::NullPointer, "sample is null");
        };
        if out.is_null() {
            return fail(BdidStatus::NullPointer, "out is null");
        }
        let method = match baseline {
            BDID_BASELINE_OR => Method::Or,
            BDID_BASELINE_DR => Method::Dr,
            BDID_BASELINE_IPW_HT => Method::IpwHt,
            BDID_BASELINE_IPW_HAJEK => Method::IpwHajek,
            other => return fail(BdidStatus::InvalidInput, format!("unknown baseline {other}")),
        };
        match settings(alpha, ridge) {
            Ok(s) => write_estimate(method, &s, &sample.0, None, out),
            Err(status) => status,
        }
    })
}

/// Two-way fixed-effects estimate on the two-period panel `(y1, y2, d, x)`
/// with unit-clustered standard errors.
///
/// # Safety
/// `y1`, `y2` and `d` must point to `n` values, `x` to `n * p` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bdid_twfe(
    y1: *const f64,
    y2: *const f64,
    d: *const u8,
    x: *const f64,
    n: usize,
    p: usize,
    alpha: f64,
    out: *mut BdidEstimate,
) -> BdidStatus {
    guard(|| {
        if out.is_null() {
            return fail(BdidStatus::NullPointer, "out is null");
        }
        let build = || -> Result<(PanelDataset, DiDSample, EstimateSettings), BdidStatus> {
            let y1 = unsafe { slice(y1, n, "y1") }?;
            let y2 = unsafe { slice(y2, n, "y2") }?;
            let d = unsafe { slice(d, n, "d") }?;
            let x = unsafe { covariates(x, n, p) }?;
            let panel = PanelDataset::new(y1.to_vec(), y2.to_vec(), d.iter().map(|&v| v != 0).collect(), x, None)
                .map_err(from_error)?;
            let sample = to_canonical(&panel).map_err(from_error)?;
            Ok((panel, sample, settings(alpha, 0.0)?))
        };
        match build() {
            Ok((panel, sample, s)) => write_estimate(Method::Twfe, &s, &sample, Some(&panel), out),
            Err(status) => status,
        }
    })
}
