//! The vacuum-probability nonclassicality criterion `P₀ᴹ > P₀^{⊗M}` and the
//! log-space distances from its classical boundary.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_10;

use crate::error::{param, Error, Result};
use crate::fock::SourceComposition;

/// Number of ulps of the compared log-probabilities treated as rounding noise.
const ROUNDING_ULPS: f64 = 16.0;

fn check_detectors(m: u32) -> Result<()> {
    if m < 2 {
        return Err(param("M", format!("need at least two detectors, got {m}")));
    }
    Ok(())
}

fn check_a(m: u32, a: f64) -> Result<()> {
    check_detectors(m)?;
    let limit = -1.0 / m as f64;
    if !(a < limit) {
        return Err(Error::Domain {
            what: "threshold function",
            reason: format!("a = {a} must be below -1/M = {limit}"),
        });
    }
    Ok(())
}

/// Largest value of `P₀ + a·P₀^{⊗M}` reachable by a coherent state:
/// `a(1-M)(-aM)^{-M/(M-1)}`.
pub fn threshold_f(m: u32, a: f64) -> Result<f64> {
    check_a(m, a)?;
    let m = m as f64;
    Ok(a * (1.0 - m) * (-a * m).powf(-m / (m - 1.0)))
}

/// Mean photon number per detector arm of the coherent state that attains
/// [`threshold_f`]: `ln(-aM)/(M-1)`. The state itself carries `M` times as
/// many photons.
pub fn optimal_classical_mean(m: u32, a: f64) -> Result<f64> {
    check_a(m, a)?;
    let m = m as f64;
    Ok((-a * m).ln() / (m - 1.0))
}

/// Outcome of evaluating the criterion on a pair of vacuum probabilities.
///
/// Probabilities are natural logs; the distances are in base-10 log units.
/// When the joint vacuum probability is exactly zero while the single-arm
/// one is not, the state is maximally nonclassical: `unbounded` is set and
/// the distances are `+inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub m: u32,
    pub log_p0: f64,
    pub log_p0m: f64,
    pub d0: f64,
    pub d0m: f64,
    pub d: f64,
    pub violated: bool,
    pub unbounded: bool,
}

impl CriterionResult {
    /// `M·ln P₀ − ln P₀^{⊗M}`; positive on the nonclassical side.
    pub fn margin(&self) -> f64 {
        margin(self.log_p0, self.log_p0m, self.m)
    }
}

/// `M·ln P₀ − ln P₀^{⊗M}`.
pub fn margin(log_p0: f64, log_p0m: f64, m: u32) -> f64 {
    m as f64 * log_p0 - log_p0m
}

/// Criterion with no extra tolerance.
pub fn evaluate(log_p0: f64, log_p0m: f64, m: u32) -> Result<CriterionResult> {
    evaluate_with_tolerance(log_p0, log_p0m, m, 0.0)
}

/// Criterion that only reports a violation when the margin exceeds
/// `tolerance` (natural-log units) on top of floating-point rounding of the
/// inputs.
pub fn evaluate_with_tolerance(
    log_p0: f64,
    log_p0m: f64,
    m: u32,
    tolerance: f64,
) -> Result<CriterionResult> {
    check_detectors(m)?;
    if log_p0 > 0.0 || log_p0.is_nan() {
        return Err(param(
            "log_P0",
            format!("{log_p0} is not a log-probability"),
        ));
    }
    if log_p0m > 0.0 || log_p0m.is_nan() {
        return Err(param(
            "log_P0M",
            format!("{log_p0m} is not a log-probability"),
        ));
    }
    if !(tolerance >= 0.0) {
        return Err(param(
            "tolerance",
            format!("{tolerance} must be non-negative"),
        ));
    }
    let mf = m as f64;
    let quiet = CriterionResult {
        m,
        log_p0,
        log_p0m,
        d0: 0.0,
        d0m: 0.0,
        d: 0.0,
        violated: false,
        unbounded: false,
    };
    if log_p0 == f64::NEG_INFINITY {
        return Ok(quiet);
    }
    if log_p0m == f64::NEG_INFINITY {
        return Ok(CriterionResult {
            d0: f64::INFINITY,
            d0m: f64::INFINITY,
            d: f64::INFINITY,
            violated: true,
            unbounded: true,
            ..quiet
        });
    }
    let gap = margin(log_p0, log_p0m, m);
    let rounding = ROUNDING_ULPS * f64::EPSILON * (mf * log_p0.abs() + log_p0m.abs());
    if gap <= tolerance + rounding {
        return Ok(quiet);
    }
    let d0 = gap / (mf * LN_10);
    Ok(CriterionResult {
        d0,
        d0m: mf * d0,
        d: (mf * mf + 1.0).sqrt() * d0,
        violated: true,
        ..quiet
    })
}

/// Exact distance `d` for `N` identical emitters `η|1⟩⟨1| + (1-η)|0⟩⟨0|`
/// behind a symmetric `M`-way split.
pub fn ensemble_distance(n: f64, m: u32, eta: f64) -> Result<f64> {
    check_detectors(m)?;
    let mf = m as f64;
    let log_p0 = n * (-eta / mf).ln_1p();
    let log_p0m = n * (-eta).ln_1p();
    Ok(evaluate(log_p0, log_p0m, m)?.d)
}

/// Weak-emitter expansion of [`ensemble_distance`]:
/// `N(M-1)√(M²+1) η² / (2M² ln 10)`.
pub fn ensemble_distance_weak(n: f64, m: u32, eta: f64) -> f64 {
    let mf = m as f64;
    n * (mf - 1.0) * (mf * mf + 1.0).sqrt() * eta * eta / (2.0 * mf * mf * LN_10)
}

/// Evaluates the criterion for a source built only from classical
/// generators behind a symmetric split with efficiency `per_arm_efficiency`
/// per arm. Sources containing a non-classical part are rejected.
pub fn classical_bound_check(
    source: &SourceComposition,
    m: u32,
    per_arm_efficiency: f64,
) -> Result<CriterionResult> {
    check_detectors(m)?;
    if !source.is_declared_classical() {
        return Err(param(
            "source",
            "contains a part that is not a classical generator",
        ));
    }
    let total = per_arm_efficiency * m as f64;
    if !(per_arm_efficiency >= 0.0) || total > 1.0 + 1e-12 {
        return Err(param(
            "per_arm_efficiency",
            format!("{per_arm_efficiency} × {m} arms exceeds one"),
        ));
    }
    let total = total.min(1.0);
    evaluate(
        source.no_click_prob(per_arm_efficiency),
        source.no_click_prob(total),
        m,
    )
}
