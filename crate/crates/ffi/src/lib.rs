//! C interface to `photon-ensemble`.
//!
//! Sources and networks live behind opaque handles created by the `*_new`
//! / `*_from_toml` functions and released with the matching `*_free`.
//! Every fallible call returns a [`PeStatus`]; on failure the message is
//! available from [`pe_last_error`] on the same thread. Results are written
//! through out-pointers, which are left untouched on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use photon_ensemble::detection::{self, DetectorNetwork};
use photon_ensemble::montecarlo::{self, SimConfig};
use photon_ensemble::planner::{self, Gating, Regime};
use photon_ensemble::{criteria, sources, CriterionResult, Error, SourceSpec};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Domain = 3,
    Numeric = 4,
    Unsupported = 5,
    Infeasible = 6,
    Config = 7,
    Io = 8,
    Panic = 9,
}

/// Emitter ensemble description.
pub struct PeSource(SourceSpec);

/// Detector network description.
pub struct PeNetwork(DetectorNetwork);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PeCriterion {
    pub m: u32,
    pub log_p0: f64,
    pub log_p0m: f64,
    pub d0: f64,
    pub d0m: f64,
    pub d: f64,
    pub violated: bool,
    pub unbounded: bool,
}

impl From<CriterionResult> for PeCriterion {
    fn from(r: CriterionResult) -> Self {
        Self {
            m: r.m,
            log_p0: r.log_p0,
            log_p0m: r.log_p0m,
            d0: r.d0,
            d0m: r.d0m,
            d: r.d,
            violated: r.violated,
            unbounded: r.unbounded,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PeSimResult {
    pub open_bins: u64,
    pub log_p0_hat: f64,
    pub log_p0m_hat: f64,
    pub se_log_p0: f64,
    pub se_log_p0m: f64,
    pub d: f64,
    pub sigma_d: f64,
    /// `d/σ_d`; zero when the estimate does not violate the criterion.
    pub ratio: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeGating {
    Allowed = 0,
    BeamSplitterOnly = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeRegime {
    FreeRunning = 0,
    Attenuated = 1,
    Gated = 2,
    GatedPlusAttenuated = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PePlan {
    pub t_min: f64,
    pub t_opt: f64,
    pub regime: PeRegime,
    pub flux: f64,
    pub open_bins: f64,
    pub duty_cycle: f64,
    pub click_rate: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(PeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parameter { .. } => PeStatus::InvalidParameter,
            Error::Domain { .. } => PeStatus::Domain,
            Error::Truncation { .. } | Error::Numeric { .. } => PeStatus::Numeric,
            Error::Unsupported(_) => PeStatus::Unsupported,
            Error::Infeasible(_) => PeStatus::Infeasible,
            Error::Config(_) => PeStatus::Config,
            Error::Io(_) => PeStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PeStatus::NullPointer, format!("null pointer: {what}"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PeStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            PeStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    ptr.write(value);
    Ok(())
}

// checks `out` before allocating so a null out-pointer leaks nothing
unsafe fn emit<T>(
    out: *mut *mut T,
    value: impl FnOnce() -> Result<T, Failure>,
) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(Box::into_raw(Box::new(value()?)));
    Ok(())
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|e| {
        Failure(
            PeStatus::InvalidParameter,
            format!("{what} is not UTF-8: {e}"),
        )
    })
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, Failure> {
    toml::from_str(text).map_err(|e| Failure(PeStatus::Config, e.to_string()))
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn pe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// `n` emitters of single-photon efficiency `eta1`.
///
/// # Safety
/// `out` must be a valid pointer to a `PeSource*`.
#[no_mangle]
pub unsafe extern "C" fn pe_source_new_ensemble(
    n: u64,
    eta1: f64,
    out: *mut *mut PeSource,
) -> PeStatus {
    guard(|| {
        emit(out, || {
            let spec = SourceSpec::ensemble(n, eta1);
            spec.validate()?;
            Ok(PeSource(spec))
        })
    })
}

/// Source from the TOML body of a `[source]` table.
///
/// # Safety
/// `toml_text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pe_source_from_toml(
    toml_text: *const c_char,
    out: *mut *mut PeSource,
) -> PeStatus {
    guard(|| {
        emit(out, || {
            let spec: SourceSpec = parse_toml(text(toml_text, "toml_text")?)?;
            spec.validate()?;
            Ok(PeSource(spec))
        })
    })
}

/// Releases a source. Null is ignored.
///
/// # Safety
/// `source` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pe_source_free(source: *mut PeSource) {
    if !source.is_null() {
        drop(Box::from_raw(source));
    }
}

/// Balanced `m`-arm network with equal detector efficiency and default
/// timing (10 ns bins, 500 kHz saturation and switching, 25 ns dead time).
///
/// # Safety
/// `out` must be a valid pointer to a `PeNetwork*`.
#[no_mangle]
pub unsafe extern "C" fn pe_network_symmetric(
    m: u32,
    efficiency: f64,
    out: *mut *mut PeNetwork,
) -> PeStatus {
    guard(|| {
        emit(out, || {
            Ok(PeNetwork(DetectorNetwork::symmetric(
                m as usize, efficiency,
            )?))
        })
    })
}

/// Network from the TOML body of a `[network]` table.
///
/// # Safety
/// `toml_text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pe_network_from_toml(
    toml_text: *const c_char,
    out: *mut *mut PeNetwork,
) -> PeStatus {
    guard(|| {
        emit(out, || {
            let net: DetectorNetwork = parse_toml(text(toml_text, "toml_text")?)?;
            net.validate()?;
            Ok(PeNetwork(net))
        })
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `network` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pe_network_free(network: *mut PeNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Natural-log vacuum probabilities of arm 0 and of all arms at extra
/// transmittance `t`.
///
/// # Safety
/// Handles must be live; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pe_vacuum_logprobs(
    source: *const PeSource,
    network: *const PeNetwork,
    t: f64,
    log_p0: *mut f64,
    log_p0m: *mut f64,
) -> PeStatus {
    guard(|| {
        let src = &borrow(source, "source")?.0;
        let net = &borrow(network, "network")?.0;
        if log_p0.is_null() || log_p0m.is_null() {
            return Err(null("out"));
        }
        let (a, b) = detection::network_vacuum_logprobs(net, src, t)?;
        write(log_p0, a, "log_p0")?;
        write(log_p0m, b, "log_p0m")
    })
}

/// Criterion on given natural-log vacuum probabilities.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pe_evaluate(
    log_p0: f64,
    log_p0m: f64,
    m: u32,
    out: *mut PeCriterion,
) -> PeStatus {
    guard(|| write(out, criteria::evaluate(log_p0, log_p0m, m)?.into(), "out"))
}

/// Criterion for a source behind a balanced network at transmittance `t`.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pe_evaluate_source(
    source: *const PeSource,
    network: *const PeNetwork,
    t: f64,
    out: *mut PeCriterion,
) -> PeStatus {
    guard(|| {
        let src = &borrow(source, "source")?.0;
        let net = &borrow(network, "network")?.0;
        let r = detection::criterion_from_network_attenuated(net, src, t)?;
        write(out, r.into(), "out")
    })
}

/// Classical maximum of `P₀ + a·P₀^{⊗M}`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pe_threshold_f(m: u32, a: f64, out: *mut f64) -> PeStatus {
    guard(|| write(out, criteria::threshold_f(m, a)?, "out"))
}

/// Minimal efficiency with one thermal mode of mean `nbar` shared by `n`
/// emitters.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pe_noise_threshold_common(nbar: f64, n: u64, out: *mut f64) -> PeStatus {
    guard(|| write(out, sources::noise_threshold_common(nbar, n)?, "out"))
}

/// Minimal efficiency with a thermal mode of mean `nbar` per emitter.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pe_noise_threshold_per_emitter(nbar: f64, out: *mut f64) -> PeStatus {
    guard(|| write(out, sources::noise_threshold_per_emitter(nbar)?, "out"))
}

/// Largest emitter count keeping the decay-averaged criterion violated.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pe_max_emitters_decay(t_m: f64, tau_s: f64, out: *mut f64) -> PeStatus {
    guard(|| write(out, sources::max_emitters_decay(t_m, tau_s)?, "out"))
}

/// Monte Carlo run over `bins` wall-clock bins.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pe_simulate(
    source: *const PeSource,
    network: *const PeNetwork,
    bins: u64,
    duty_cycle: f64,
    transmittance: f64,
    seed: u64,
    out: *mut PeSimResult,
) -> PeStatus {
    guard(|| {
        let src = &borrow(source, "source")?.0;
        let net = &borrow(network, "network")?.0;
        let cfg = SimConfig::new(src.clone(), net.clone(), bins, seed)
            .with_duty_cycle(duty_cycle)
            .with_transmittance(transmittance);
        let est = montecarlo::run(&cfg)?;
        let sig = montecarlo::significance(&est, est.m)?;
        write(
            out,
            PeSimResult {
                open_bins: est.open_bins,
                log_p0_hat: est.log_p0_hat,
                log_p0m_hat: est.log_p0m_hat,
                se_log_p0: est.se_log_p0,
                se_log_p0m: est.se_log_p0m,
                d: sig.d,
                sigma_d: sig.sigma_d,
                ratio: sig.ratio,
            },
            "out",
        )
    })
}

/// Transmittance minimising the wall-clock time to `d/σ_d = target`.
/// `gating` takes a [`PeGating`] value.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pe_optimize_attenuation(
    source: *const PeSource,
    network: *const PeNetwork,
    target: f64,
    gating: u32,
    out: *mut PePlan,
) -> PeStatus {
    guard(|| {
        let src = &borrow(source, "source")?.0;
        let net = &borrow(network, "network")?.0;
        let gating = match gating {
            g if g == PeGating::Allowed as u32 => Gating::Allowed,
            g if g == PeGating::BeamSplitterOnly as u32 => Gating::BeamSplitterOnly,
            g => {
                return Err(Failure(
                    PeStatus::InvalidParameter,
                    format!("unknown gating mode {g}"),
                ))
            }
        };
        let plan = planner::optimize_attenuation(src, net, target, gating)?;
        let regime = match plan.regime {
            Regime::FreeRunning => PeRegime::FreeRunning,
            Regime::Attenuated => PeRegime::Attenuated,
            Regime::Gated => PeRegime::Gated,
            Regime::GatedPlusAttenuated => PeRegime::GatedPlusAttenuated,
        };
        write(
            out,
            PePlan {
                t_min: plan.t_min,
                t_opt: plan.t_opt,
                regime,
                flux: plan.flux,
                open_bins: plan.open_bins,
                duty_cycle: plan.duty_cycle,
                click_rate: plan.click_rate,
            },
            "out",
        )
    })
}
