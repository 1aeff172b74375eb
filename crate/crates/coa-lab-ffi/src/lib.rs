//! C ABI over coa-lab. Every function returns a [`CoaStatus`]; on failure
//! `coa_last_error_message` describes the error for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coa_lab::assigndesign::{CounterfactualMode, Design, ExposureKind, ExposureSpec};
use coa_lab::coa::{coa_ipw_estimate, EstimandRequest};
use coa_lab::harness::{coverage_normality_report, run_monte_carlo, summarize, RunConfig};
use coa_lab::inference::{confidence_interval, variance_components};
use coa_lab::netgraph::Network;
use coa_lab::CoaError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Positivity = 4,
    Enumeration = 5,
    Numerical = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoaExposure {
    Own = 0,
    Count = 1,
    Fraction = 2,
    Any = 3,
}

/// Exposure codes arrive as integers so that out-of-range values are an
/// error rather than an invalid enum.
fn exposure_kind(code: u32) -> Result<ExposureKind, Failure> {
    Ok(match code {
        c if c == CoaExposure::Own as u32 => ExposureKind::Own,
        c if c == CoaExposure::Count as u32 => ExposureKind::Count,
        c if c == CoaExposure::Fraction as u32 => ExposureKind::Fraction,
        c if c == CoaExposure::Any as u32 => ExposureKind::Any,
        c => return Err(CoaError::InvalidInput(format!("unknown exposure code {c}")).into()),
    })
}

/// Opaque network handle.
pub struct CoaNetwork(Network);

/// Opaque assignment design handle.
pub struct CoaDesign(Design);

/// Contrast `V̂(t₁) − V̂(t₀)` with its conservative interval.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoaContrast {
    pub tau_hat: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
    pub included: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &CoaError) -> CoaStatus {
    match e {
        CoaError::Config { .. } | CoaError::Parse { .. } => CoaStatus::Config,
        CoaError::Positivity { .. }
        | CoaError::EmptyCell { .. }
        | CoaError::UndefinedExposure(_)
        | CoaError::NoEligibleUnits => {
            CoaStatus::Positivity
        }
        CoaError::EnumerationCap { .. } => CoaStatus::Enumeration,
        CoaError::Singular(_) | CoaError::NonConvergence { .. } | CoaError::Undefined(_) => CoaStatus::Numerical,
        CoaError::InvalidInput(_) | CoaError::Io(_) => CoaStatus::InvalidInput,
    }
}

enum Failure {
    Null(&'static str),
    Lib(CoaError),
}

impl From<CoaError> for Failure {
    fn from(e: CoaError) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard<F>(f: F) -> CoaStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CoaStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CoaStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            CoaStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `p` points to `len` readable values.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: non-null handles come from this library and are still live.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn coa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Network on `n` units from `m` links `src[k] → dst[k]`.
///
/// # Safety
/// `src` and `dst` must point to `m` values each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coa_network_from_edges(
    n: usize,
    directed: bool,
    src: *const usize,
    dst: *const usize,
    m: usize,
    out: *mut *mut CoaNetwork,
) -> CoaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let (s, d) = unsafe { (slice(src, m, "src")?, slice(dst, m, "dst")?) };
        let net = Network::from_edges(n, directed, s.iter().copied().zip(d.iter().copied()))?;
        unsafe { *out = Box::into_raw(Box::new(CoaNetwork(net))) };
        Ok(())
    })
}

/// # Safety
/// `net` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coa_network_free(net: *mut CoaNetwork) {
    if !net.is_null() {
        drop(unsafe { Box::from_raw(net) });
    }
}

/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coa_network_size(net: *const CoaNetwork, out: *mut usize) -> CoaStatus {
    guard(|| {
        let net = unsafe { deref(net, "net")? };
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        unsafe { *out = net.0.n() };
        Ok(())
    })
}

/// Independent Bernoulli(`p`) assignment on `n` units.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coa_design_bernoulli(n: usize, p: f64, out: *mut *mut CoaDesign) -> CoaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let design = Design::bernoulli(n, p)?;
        unsafe { *out = Box::into_raw(Box::new(CoaDesign(design))) };
        Ok(())
    })
}

/// # Safety
/// `design` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coa_design_free(design: *mut CoaDesign) {
    if !design.is_null() {
        drop(unsafe { Box::from_raw(design) });
    }
}

struct Observed<'a> {
    net: &'a Network,
    design: &'a Design,
    d: &'a [u8],
    y: &'a [f64],
}

unsafe fn observed<'a>(
    net: *const CoaNetwork,
    design: *const CoaDesign,
    d: *const u8,
    y: *const f64,
    n: usize,
) -> Result<Observed<'a>, Failure> {
    let net = unsafe { &deref(net, "net")?.0 };
    let design = unsafe { &deref(design, "design")?.0 };
    if net.n() != n || design.n() != n {
        return Err(CoaError::InvalidInput(format!(
            "network has {} units and design {}, data has {n}",
            net.n(),
            design.n()
        ))
        .into());
    }
    let (d, y) = unsafe { (slice(d, n, "d")?, slice(y, n, "y")?) };
    if d.iter().any(|&v| v > 1) {
        return Err(CoaError::InvalidInput("assignments must be 0 or 1".into()).into());
    }
    Ok(Observed { net, design, d, y })
}

/// IPW estimates `V̂(t)` at each of `n_levels` levels for a `CoaExposure` code, under the experimental
/// counterfactual, written to `out_values`.
///
/// # Safety
/// Handles must be live; `d` and `y` hold `n` values; `levels` and
/// `out_values` hold `n_levels` values.
#[no_mangle]
pub unsafe extern "C" fn coa_estimate(
    net: *const CoaNetwork,
    design: *const CoaDesign,
    exposure: u32,
    levels: *const f64,
    n_levels: usize,
    d: *const u8,
    y: *const f64,
    n: usize,
    out_values: *mut f64,
) -> CoaStatus {
    guard(|| {
        let obs = unsafe { observed(net, design, d, y, n)? };
        let levels = unsafe { slice(levels, n_levels, "levels")? };
        if out_values.is_null() {
            return Err(Failure::Null("out_values"));
        }
        let req = EstimandRequest::new(
            ExposureSpec::new(exposure_kind(exposure)?, obs.net),
            CounterfactualMode::Experimental,
            levels.to_vec(),
        );
        let est = coa_ipw_estimate(obs.y, obs.d, obs.design, &req)?;
        for (k, e) in est.iter().enumerate() {
            unsafe { *out_values.add(k) = e.value };
        }
        Ok(())
    })
}

/// Contrast between levels `t1` and `t0` with a `1 − alpha` interval at rate `n^{−rho}`.
///
/// # Safety
/// Handles must be live; `d` and `y` hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coa_contrast(
    net: *const CoaNetwork,
    design: *const CoaDesign,
    exposure: u32,
    t1: f64,
    t0: f64,
    d: *const u8,
    y: *const f64,
    n: usize,
    rho: f64,
    alpha: f64,
    out: *mut CoaContrast,
) -> CoaStatus {
    guard(|| {
        let obs = unsafe { observed(net, design, d, y, n)? };
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let req = EstimandRequest::new(
            ExposureSpec::new(exposure_kind(exposure)?, obs.net),
            CounterfactualMode::Experimental,
            vec![t1, t0],
        );
        let est = coa_ipw_estimate(obs.y, obs.d, obs.design, &req)?;
        let tau_hat = est[0].value - est[1].value;
        let included = est[0].included();
        let v = variance_components(obs.y, obs.d, obs.design, &req, rho, None)?;
        let ci = confidence_interval(tau_hat, v.sigma, included, rho, alpha)?;
        unsafe {
            *out = CoaContrast {
                tau_hat,
                sigma: v.sigma,
                lower: ci.lower,
                upper: ci.upper,
                included,
            }
        };
        Ok(())
    })
}

/// Runs the Monte Carlo study described by a JSON run config and returns its
/// summary as a JSON string, to be released with `coa_string_free`.
///
/// # Safety
/// `config_json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coa_monte_carlo_json(config_json: *const c_char, out: *mut *mut c_char) -> CoaStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(Failure::Null("config_json"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let text = unsafe { CStr::from_ptr(config_json) }
            .to_str()
            .map_err(|e| CoaError::InvalidInput(format!("config is not UTF-8: {e}")))?;
        let cfg = RunConfig::from_json(text)?;
        cfg.validate()?;
        let table = run_monte_carlo(&cfg, None)?;
        let alpha = cfg.inference.enabled.then_some(cfg.inference.alpha);
        let value = serde_json::json!({
            "summary": summarize(&table),
            "coverage": coverage_normality_report(&table, alpha),
        });
        let s = CString::new(value.to_string()).map_err(|e| CoaError::Undefined(e.to_string()))?;
        unsafe { *out = s.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
