//! C ABI over `phasemarket`.
//!
//! Objects are opaque handles created by `pm_*_new`/producer functions and
//! released with the matching `pm_*_free`. Every fallible call returns a
//! [`PmStatus`]; on failure `pm_last_error` describes the cause for the
//! calling thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use phasemarket::fitting::{fit_power_law, PowerLawOptions, PowerLawPoint};
use phasemarket::observables::{decompose, susceptibility_fast, DecomposeOptions, PriceHistogram};
use phasemarket::sweep::{run_point, PointOptions};
use phasemarket::{run_simulation, Error, Profile, SimulationConfig, SimulationResult};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    UnknownKey = 3,
    BadValue = 4,
    Io = 5,
    Analysis = 6,
    BufferTooSmall = 7,
    InvalidUtf8 = 8,
    Panic = 9,
}

/// Simulation parameters.
pub struct PmConfig(SimulationConfig);

/// Outcome of one simulation.
pub struct PmResult(SimulationResult);

/// Ensemble price histogram.
pub struct PmHistogram(PriceHistogram);

/// Plateau and peak of a histogram. Peak fields are NaN and
/// `has_gaussian` is 0 when no peak was fitted; `shoulder_price` is 0 when
/// no shoulder was found.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PmDecomposition {
    pub split_price: f64,
    pub f0: f64,
    pub f0_err: f64,
    pub plateau_found: i32,
    pub has_gaussian: i32,
    pub gauss_amplitude: f64,
    pub gauss_mean: f64,
    pub gauss_sigma: f64,
    pub shoulder_price: u32,
}

/// `F0 = g0 (alpha - alpha_c)^gamma` with one-sigma errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PmPowerLaw {
    pub g0: f64,
    pub g0_err: f64,
    pub alpha_c: f64,
    pub alpha_c_err: f64,
    pub gamma: f64,
    pub gamma_err: f64,
    pub residual: f64,
    pub n_points: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> PmStatus {
    match e {
        Error::InvalidConfig(_) => PmStatus::InvalidConfig,
        Error::UnknownKey(_) => PmStatus::UnknownKey,
        Error::BadValue { .. } | Error::InvalidSweep(_) => PmStatus::BadValue,
        Error::Io { .. } | Error::Write { .. } | Error::Corrupt { .. } => PmStatus::Io,
        Error::Simulation { source, .. } => status_of(source),
        _ => PmStatus::Analysis,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PmStatus, String)>) -> PmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside phasemarket");
            PmStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (PmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PmStatus, String) {
    (PmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (PmStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (PmStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: usize) -> Result<(), (PmStatus, String)> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < src.len() {
        return Err((
            PmStatus::BufferTooSmall,
            format!("buffer holds {len}, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Message of the calling thread's last failure, or null. Valid until the
/// next failing call on this thread.
#[no_mangle]
pub extern "C" fn pm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Buy-side utility `alpha / price + last_delta`.
#[no_mangle]
pub extern "C" fn pm_call_utility(alpha: f64, price: u32, last_delta: i8) -> f64 {
    phasemarket::call_utility(alpha, price, last_delta)
}

/// Sell-side utility `price - beta * last_delta`.
#[no_mangle]
pub extern "C" fn pm_put_utility(beta: f64, price: u32, last_delta: i8) -> f64 {
    phasemarket::put_utility(beta, price, last_delta)
}

/// New configuration: full-scale defaults, or the desk profile when `desk`
/// is non-zero.
#[no_mangle]
pub extern "C" fn pm_config_new(desk: i32) -> *mut PmConfig {
    let profile = if desk != 0 { Profile::Desk } else { Profile::Full };
    Box::into_raw(Box::new(PmConfig(profile.config())))
}

/// Parses a TOML configuration document.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_config_from_toml(toml: *const c_char, out: *mut *mut PmConfig) -> PmStatus {
    guard(|| {
        let text = as_str(toml, "toml")?;
        let cfg = SimulationConfig::from_toml_str(text).map_err(lib_err)?;
        put(out, PmConfig(cfg))
    })
}

/// Sets one configuration key from its textual value.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pm_config_set(cfg: *mut PmConfig, key: *const c_char, value: *const c_char) -> PmStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let key = as_str(key, "key")?;
        let value = as_str(value, "value")?;
        cfg.0.set(key, value).map_err(lib_err)
    })
}

/// `PM_STATUS_OK` when the configuration is valid.
///
/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_config_validate(cfg: *const PmConfig) -> PmStatus {
    guard(|| as_ref(cfg, "cfg")?.0.check().map_err(lib_err))
}

/// # Safety
/// `cfg` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pm_config_free(cfg: *mut PmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs one simulation with the given seed.
///
/// # Safety
/// `cfg` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_simulate(cfg: *const PmConfig, seed: u64, out: *mut *mut PmResult) -> PmStatus {
    guard(|| {
        let cfg = as_ref(cfg, "cfg")?;
        let r = run_simulation(&cfg.0, seed).map_err(lib_err)?;
        put(out, PmResult(r))
    })
}

/// Number of stocks in a result.
///
/// # Safety
/// `res` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_result_n_stocks(res: *const PmResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.final_stocks.len())
}

/// Copies final prices into `buf` (`len` entries available).
///
/// # Safety
/// `res` must come from this library; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pm_result_prices(res: *const PmResult, buf: *mut u32, len: usize) -> PmStatus {
    guard(|| {
        let r = as_ref(res, "res")?;
        copy_out(&r.0.final_prices(), buf, len)
    })
}

/// Trades (buys plus sells) in the final step.
///
/// # Safety
/// `res` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_result_final_trades(res: *const PmResult) -> usize {
    res.as_ref()
        .and_then(|r| r.0.activity.last())
        .map_or(0, |a| (a.buys + a.sells) as usize)
}

/// Susceptibility of the simulation's ledger.
///
/// # Safety
/// `res` must come from this library; `chi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_result_chi(res: *const PmResult, chi: *mut f64) -> PmStatus {
    guard(|| {
        let r = as_ref(res, "res")?;
        let chi = chi.as_mut().ok_or_else(|| null("chi"))?;
        *chi = susceptibility_fast(&r.0.ledgers, r.0.config.n_stocks)
            .map_err(lib_err)?
            .chi;
        Ok(())
    })
}

/// # Safety
/// `res` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pm_result_free(res: *mut PmResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Runs `n_sims` simulations seeded from `base_seed` and accumulates their
/// final prices. `workers` = 0 uses every core.
///
/// # Safety
/// `cfg` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_ensemble_histogram(
    cfg: *const PmConfig,
    n_sims: usize,
    base_seed: u64,
    workers: usize,
    out: *mut *mut PmHistogram,
) -> PmStatus {
    guard(|| {
        let cfg = as_ref(cfg, "cfg")?;
        let opts = PointOptions {
            batch_sets: 0,
            chi: false,
            ..Default::default()
        };
        let workers = (workers > 0).then_some(workers);
        let p = run_point(&cfg.0, n_sims, base_seed, &opts, workers).map_err(lib_err)?;
        put(out, PmHistogram(p.histogram))
    })
}

/// Lowest price bin.
///
/// # Safety
/// `h` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_histogram_floor(h: *const PmHistogram) -> u32 {
    h.as_ref().map_or(0, |h| h.0.price_floor)
}

/// Number of bins, from the floor to the highest observed price.
///
/// # Safety
/// `h` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_histogram_len(h: *const PmHistogram) -> usize {
    h.as_ref().map_or(0, |h| h.0.counts.len())
}

/// Copies bin counts into `buf`.
///
/// # Safety
/// `h` must come from this library; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pm_histogram_counts(h: *const PmHistogram, buf: *mut u64, len: usize) -> PmStatus {
    guard(|| copy_out(&as_ref(h, "h")?.0.counts, buf, len))
}

/// Plateau/peak decomposition with default options.
///
/// # Safety
/// `h` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_histogram_decompose(h: *const PmHistogram, out: *mut PmDecomposition) -> PmStatus {
    guard(|| {
        let h = as_ref(h, "h")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = decompose(&h.0, &DecomposeOptions::default()).map_err(lib_err)?;
        *out = PmDecomposition {
            split_price: d.split_price,
            f0: d.f0,
            f0_err: d.f0_err,
            plateau_found: d.plateau_found as i32,
            has_gaussian: d.gaussian.is_some() as i32,
            gauss_amplitude: d.gaussian.map_or(f64::NAN, |g| g.amplitude),
            gauss_mean: d.gaussian.map_or(f64::NAN, |g| g.mean),
            gauss_sigma: d.gaussian.map_or(f64::NAN, |g| g.sigma),
            shoulder_price: d.shoulder_price.unwrap_or(0),
        };
        Ok(())
    })
}

/// # Safety
/// `h` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pm_histogram_free(h: *mut PmHistogram) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Fits `F0 = g0 (alpha - alpha_c)^gamma` to `n` samples. `sigma` may be
/// null for an unweighted fit.
///
/// # Safety
/// `alpha` and `f0` (and `sigma` when non-null) must hold `n` values;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_fit_power_law(
    alpha: *const f64,
    f0: *const f64,
    sigma: *const f64,
    n: usize,
    out: *mut PmPowerLaw,
) -> PmStatus {
    guard(|| {
        if alpha.is_null() || f0.is_null() {
            return Err(null("alpha or f0"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let a = std::slice::from_raw_parts(alpha, n);
        let f = std::slice::from_raw_parts(f0, n);
        let s = (!sigma.is_null()).then(|| std::slice::from_raw_parts(sigma, n));
        let pts: Vec<PowerLawPoint> = (0..n)
            .map(|i| PowerLawPoint {
                alpha: a[i],
                f0: f[i],
                sigma: s.map_or(0.0, |s| s[i]),
            })
            .collect();
        let opts = PowerLawOptions {
            weighted: s.is_some(),
            ..Default::default()
        };
        let fit = fit_power_law(&pts, &opts).map_err(lib_err)?;
        *out = PmPowerLaw {
            g0: fit.g0,
            g0_err: fit.g0_err,
            alpha_c: fit.alpha_c,
            alpha_c_err: fit.alpha_c_err,
            gamma: fit.gamma,
            gamma_err: fit.gamma_err,
            residual: fit.residual,
            n_points: fit.n_points,
        };
        Ok(())
    })
}
