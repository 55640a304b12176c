//! Measurement-time planning.
//!
//! The time to reach a target `d/σ_d` follows from the per-bin variance of
//! the criterion margin. Detectors run free when their click rate stays
//! below saturation; otherwise they are gated open at a frequency limited by
//! saturation and by how fast they can be switched, which sets the duty
//! cycle converting open-bin counts into wall-clock time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria;
use crate::detection::{self, DetectorNetwork};
use crate::error::{check_positive, check_probability, param, Error, Result};
use crate::fock::LightSource;
use crate::numeric;
use crate::sources::{self, SourceSpec};

/// Default target for d/σ_d.
pub const DEFAULT_TARGET: f64 = 3.0;

const GRID_DECADES: f64 = 14.0;
const GRID_STEPS_PER_DECADE: f64 = 20.0;
const SEARCH_REL_TOL: f64 = 1e-4;

/// Whether detectors may be gated to stay below saturation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    Allowed,
    /// Plain beam-splitter measurement: free-running detectors only,
    /// saturation avoided by attenuation alone.
    BeamSplitterOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// No attenuation, detectors always open.
    FreeRunning,
    /// Attenuated to keep free-running detectors below saturation.
    Attenuated,
    /// No attenuation, detectors gated.
    Gated,
    GatedPlusAttenuated,
}

impl Regime {
    /// Regime of a plan at transmittance `t` and the given duty cycle.
    pub fn classify(t: f64, duty_cycle: f64) -> Self {
        let attenuated = t < 1.0 - 1e-12;
        match (duty_cycle < 1.0, attenuated) {
            (false, false) => Regime::FreeRunning,
            (false, true) => Regime::Attenuated,
            (true, false) => Regime::Gated,
            (true, true) => Regime::GatedPlusAttenuated,
        }
    }

    pub fn is_gated(self) -> bool {
        matches!(self, Regime::Gated | Regime::GatedPlusAttenuated)
    }
}

/// Measurement plan at one transmittance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Operating {
    pub transmittance: f64,
    pub log_p0: f64,
    pub log_p0m: f64,
    /// Largest single-arm click probability per open bin.
    pub arm_click_probability: f64,
    pub duty_cycle: f64,
    /// Open bins needed for the target significance.
    pub open_bins: f64,
    /// Wall-clock seconds.
    pub wall_time: f64,
    /// Clicks per second per arm, averaged over wall time.
    pub click_rate: f64,
}

/// Optimised measurement plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub t_min: f64,
    pub t_opt: f64,
    pub regime: Regime,
    /// Mean emitted photons reaching the network per bin, `⟨N⟩ T η`.
    pub flux: f64,
    pub open_bins: f64,
    pub duty_cycle: f64,
    pub click_rate: f64,
    /// Probability that some arm clicks in an open bin, `1 − P₀^{⊗M}`.
    pub click_probability: f64,
}

/// Open bins after which the margin estimate reaches `target` standard
/// deviations, using the delta-method variance of `M ln P̂₀ − ln P̂₀^{⊗M}`
/// with the covariance between the two estimates.
pub fn required_open_bins(log_p0: f64, log_p0m: f64, m: u32, target: f64) -> Result<f64> {
    check_positive("target_ratio", target)?;
    let r = criteria::evaluate(log_p0, log_p0m, m)?;
    if !r.violated {
        return Err(Error::Infeasible(format!(
            "criterion not violated (margin {:e})",
            r.margin()
        )));
    }
    if r.unbounded {
        return Ok(0.0);
    }
    let mf = m as f64;
    let per_bin = (mf * mf - 2.0 * mf) * (-log_p0).exp_m1() + (-log_p0m).exp_m1();
    Ok(target * target * per_bin / r.margin().powi(2))
}

/// Duty cycle that keeps every detector below saturation, or `None` when
/// free-running detectors would saturate and gating is not allowed.
pub fn duty_cycle(
    net: &DetectorNetwork,
    arm_click_probability: f64,
    gating: Gating,
) -> Option<f64> {
    let t_b = net.gate_length;
    if arm_click_probability <= net.saturation_rate * t_b * (1.0 + 1e-12) {
        return Some(1.0);
    }
    match gating {
        Gating::BeamSplitterOnly => None,
        Gating::Allowed => {
            let frequency = net
                .switch_rate
                .min(net.saturation_rate / arm_click_probability)
                .min(1.0 / t_b);
            Some(frequency * t_b)
        }
    }
}

fn operating_point(
    spec: &SourceSpec,
    net: &DetectorNetwork,
    t: f64,
    target: f64,
    gating: Gating,
) -> Result<Operating> {
    check_probability("T", t)?;
    if !net.is_symmetric() {
        return Err(Error::Unsupported(
            "planning needs the classical threshold of a symmetric network".into(),
        ));
    }
    let (log_p0, log_p0m) = detection::network_vacuum_logprobs(net, spec, t)?;
    let p_arm = detection::arm_click_probabilities(net, spec, t)?
        .into_iter()
        .fold(0.0, f64::max);
    let open_bins = required_open_bins(log_p0, log_p0m, net.arms() as u32, target)?;
    let duty = duty_cycle(net, p_arm, gating).ok_or_else(|| {
        Error::Infeasible(format!(
            "free-running detectors saturate at T = {t}: click probability {p_arm:e} per bin"
        ))
    })?;
    Ok(Operating {
        transmittance: t,
        log_p0,
        log_p0m,
        arm_click_probability: p_arm,
        duty_cycle: duty,
        open_bins,
        wall_time: open_bins * net.gate_length / duty,
        click_rate: p_arm * duty / net.gate_length,
    })
}

/// Wall-clock seconds to reach `d/σ_d = target` at transmittance `t`.
pub fn time_to_significance(
    spec: &SourceSpec,
    net: &DetectorNetwork,
    t: f64,
    target: f64,
    gating: Gating,
) -> Result<f64> {
    Ok(operating_point(spec, net, t, target, gating)?.wall_time)
}

/// Full operating point behind [`time_to_significance`].
pub fn plan_at(
    spec: &SourceSpec,
    net: &DetectorNetwork,
    t: f64,
    target: f64,
    gating: Gating,
) -> Result<Operating> {
    operating_point(spec, net, t, target, gating)
}

fn wall_or_inf(
    spec: &SourceSpec,
    net: &DetectorNetwork,
    t: f64,
    target: f64,
    gating: Gating,
) -> Result<f64> {
    match operating_point(spec, net, t, target, gating) {
        Ok(op) => Ok(op.wall_time),
        Err(Error::Infeasible(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

// Transmittance at which the busiest arm reaches the saturation click
// probability; None when even T = 1 stays below it.
fn saturation_transmittance(spec: &SourceSpec, net: &DetectorNetwork) -> Result<Option<f64>> {
    let limit = net.saturation_rate * net.gate_length;
    let excess = |t: f64| -> Result<f64> {
        let p = detection::arm_click_probabilities(net, spec, t)?
            .into_iter()
            .fold(0.0, f64::max);
        Ok(p - limit)
    };
    if excess(1.0)? <= 0.0 {
        return Ok(None);
    }
    let lo = 10f64.powf(-GRID_DECADES);
    if excess(lo)? > 0.0 {
        return Ok(Some(lo));
    }
    let log_t = numeric::bisect(
        |x| excess(x.exp()),
        lo.ln(),
        0.0,
        1e-12,
        "saturation transmittance",
    )?;
    Ok(Some(log_t.exp()))
}

// Minimum of the wall time over one segment [a, b] of transmittance.
fn minimise_segment(
    spec: &SourceSpec,
    net: &DetectorNetwork,
    a: f64,
    b: f64,
    target: f64,
    gating: Gating,
) -> Result<Option<(f64, f64)>> {
    let (la, lb) = (a.log10(), b.log10());
    let steps = (((lb - la) * GRID_STEPS_PER_DECADE).ceil() as usize).max(2);
    let grid: Vec<f64> = (0..=steps)
        .map(|i| 10f64.powf(la + (lb - la) * i as f64 / steps as f64))
        .map(|t| t.clamp(a, b))
        .collect();
    let values: Vec<f64> = grid
        .iter()
        .map(|&t| wall_or_inf(spec, net, t, target, gating))
        .collect::<Result<_>>()?;
    let (best, &best_value) = values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty grid");
    if !best_value.is_finite() {
        return Ok(None);
    }
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(steps)];
    let (t, v) = numeric::golden_section(
        |t| wall_or_inf(spec, net, t, target, gating),
        lo,
        hi,
        SEARCH_REL_TOL,
    )?;
    Ok(Some(if v <= best_value {
        (t, v)
    } else {
        (grid[best], best_value)
    }))
}

/// Transmittance minimising the wall time to `d/σ_d = target`.
pub fn optimize_attenuation(
    spec: &SourceSpec,
    net: &DetectorNetwork,
    target: f64,
    gating: Gating,
) -> Result<PlanResult> {
    spec.validate()?;
    net.validate()?;
    check_positive("target_ratio", target)?;
    let floor = 10f64.powf(-GRID_DECADES);
    let mut segments = Vec::new();
    match saturation_transmittance(spec, net)? {
        None => segments.push((floor, 1.0)),
        Some(t_sat) => {
            if t_sat > floor {
                segments.push((floor, t_sat));
            }
            if gating == Gating::Allowed {
                segments.push((t_sat, 1.0));
            }
        }
    }
    let mut best: Option<(f64, f64)> = None;
    for (a, b) in segments {
        if let Some((t, v)) = minimise_segment(spec, net, a, b, target, gating)? {
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((t, v));
            }
        }
    }
    let (t_opt, _) = best
        .ok_or_else(|| Error::Infeasible("criterion not violated at any transmittance".into()))?;
    let op = operating_point(spec, net, t_opt, target, gating)?;
    Ok(PlanResult {
        t_min: op.wall_time,
        t_opt,
        regime: Regime::classify(t_opt, op.duty_cycle),
        flux: spec.mean_photon_number()? * t_opt,
        open_bins: op.open_bins,
        duty_cycle: op.duty_cycle,
        click_rate: op.click_rate,
        click_probability: -op.log_p0m.exp_m1(),
    })
}

/// One row of the minimal-time curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: u64,
    pub t_min_gated_s: f64,
    pub t_min_bs_only_s: f64,
    #[serde(rename = "T_opt")]
    pub t_opt: f64,
    pub flux: f64,
    pub regime_gated: Regime,
    pub regime_bs_only: Regime,
}

/// Minimal measurement time against ensemble size, with gating and with the
/// beam splitter alone. `T_opt` and the flux refer to the gated plan.
pub fn figure3_curve(
    eta: f64,
    net: &DetectorNetwork,
    n_grid: &[u64],
    target: f64,
) -> Result<Vec<CurvePoint>> {
    check_probability("eta", eta)?;
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(param("N_grid", "must be strictly ascending"));
    }
    n_grid
        .par_iter()
        .map(|&n| {
            let spec = SourceSpec::ensemble(n, eta);
            let gated = optimize_attenuation(&spec, net, target, Gating::Allowed)?;
            let bs = optimize_attenuation(&spec, net, target, Gating::BeamSplitterOnly)?;
            Ok(CurvePoint {
                n,
                t_min_gated_s: gated.t_min,
                t_min_bs_only_s: bs.t_min,
                t_opt: gated.t_opt,
                flux: gated.flux,
                regime_gated: gated.regime,
                regime_bs_only: bs.regime,
            })
        })
        .collect()
}

/// Log-spaced emitter counts from `lo` to `hi`, deduplicated.
pub fn log_grid(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    if points < 2 || lo >= hi {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut grid: Vec<u64> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp().round() as u64)
        .collect();
    grid.dedup();
    grid
}

/// Constraint that limits a measurement on a decaying ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityBound {
    /// Averaging the vacuum probabilities over the decay removes the
    /// violation.
    DecayAveraging,
    /// The window must stay well below `τ_s/√N`.
    WindowLength,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub ok: bool,
    /// Largest emitter count surviving the decay averaging.
    pub max_emitters: f64,
    /// `τ_s/√N`, seconds.
    pub window_limit: f64,
    /// `τ_s/(√N t_m)`; the guard asks for at least 10.
    pub window_margin: f64,
    pub binding: Option<StabilityBound>,
}

/// Whether a window `t_m` is short enough for `n` emitters with lifetime
/// `tau_s`: requires `t_m < τ_s/(10√N)` and `N` below the decay-averaging
/// bound.
pub fn stability_guard(n: u64, tau_s: f64, t_m: f64) -> Result<StabilityReport> {
    check_positive("tau_s", tau_s)?;
    if n == 0 {
        return Err(param("N", "need at least one emitter"));
    }
    if !(t_m >= 0.0) {
        return Err(param("t_m", "must be non-negative"));
    }
    let window_limit = tau_s / (n as f64).sqrt();
    if t_m == 0.0 {
        return Ok(StabilityReport {
            ok: true,
            max_emitters: f64::INFINITY,
            window_limit,
            window_margin: f64::INFINITY,
            binding: None,
        });
    }
    let max_emitters = sources::max_emitters_decay(t_m, tau_s)?;
    let window_margin = window_limit / t_m;
    let binding = if n as f64 >= max_emitters {
        Some(StabilityBound::DecayAveraging)
    } else if window_margin < 10.0 {
        Some(StabilityBound::WindowLength)
    } else {
        None
    };
    Ok(StabilityReport {
        ok: binding.is_none(),
        max_emitters,
        window_limit,
        window_margin,
        binding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> DetectorNetwork {
        DetectorNetwork::two_arm_default()
    }

    #[test]
    fn doubling_target_quadruples_time() {
        let spec = SourceSpec::ensemble(100, 0.002);
        let t3 = time_to_significance(&spec, &net(), 1.0, 3.0, Gating::Allowed).unwrap();
        let t6 = time_to_significance(&spec, &net(), 1.0, 6.0, Gating::Allowed).unwrap();
        assert!((t6 / t3 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn classical_source_is_infeasible() {
        let spec = SourceSpec::ensemble(0, 0.0)
            .with_noise(crate::sources::NoiseModel::Common { nbar: 0.2 });
        assert!(matches!(
            time_to_significance(&spec, &net(), 1.0, 3.0, Gating::Allowed),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            optimize_attenuation(&spec, &net(), 3.0, Gating::Allowed),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn m2_variance_reduces_to_joint_term() {
        let (lp0, lp0m) = (-0.3f64, -0.61f64);
        let n = required_open_bins(lp0, lp0m, 2, 1.0).unwrap();
        let margin = 2.0 * lp0 - lp0m;
        let p = lp0m.exp();
        assert!((n - (1.0 - p) / p / margin.powi(2)).abs() < 1e-9 * n);
    }

    #[test]
    fn duty_cycle_rules() {
        let net = net();
        assert_eq!(duty_cycle(&net, 1e-3, Gating::Allowed), Some(1.0));
        assert_eq!(duty_cycle(&net, 0.5, Gating::BeamSplitterOnly), None);
        let d = duty_cycle(&net, 0.5, Gating::Allowed).unwrap();
        assert!((d - 5e-3).abs() < 1e-15);
        let fast = net.clone().with_switch_rate(1e9);
        let d = duty_cycle(&fast, 0.5, Gating::Allowed).unwrap();
        assert!((d - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn small_ensemble_keeps_full_transmission() {
        let spec = SourceSpec::ensemble(2, 0.002);
        let plan = optimize_attenuation(&spec, &net(), 3.0, Gating::Allowed).unwrap();
        assert_eq!(plan.t_opt, 1.0);
        assert_eq!(plan.regime, Regime::FreeRunning);
    }

    #[test]
    fn plans_respect_saturation() {
        for n in [10, 100, 1000, 10_000] {
            let spec = SourceSpec::ensemble(n, 0.002);
            for gating in [Gating::Allowed, Gating::BeamSplitterOnly] {
                let plan = optimize_attenuation(&spec, &net(), 3.0, gating).unwrap();
                assert!(
                    plan.click_rate <= 500e3 * (1.0 + 1e-9),
                    "{n} {gating:?} {plan:?}"
                );
            }
        }
    }

    #[test]
    fn stability_examples() {
        let day = 86_400.0;
        let r = stability_guard(100, day, 3600.0).unwrap();
        assert!((r.window_limit / 3600.0 - 2.4).abs() < 0.01);
        assert!(!r.ok);
        assert_eq!(r.binding, Some(StabilityBound::WindowLength));
        assert!(stability_guard(100, day, 0.0).unwrap().ok);
        assert!(stability_guard(100, day, 1.0).unwrap().ok);
        let bound = crate::sources::max_emitters_decay(0.1, 1.0).unwrap();
        let r = stability_guard(bound.ceil() as u64, 1.0, 0.1).unwrap();
        assert_eq!(r.binding, Some(StabilityBound::DecayAveraging));
    }

    #[test]
    fn log_grid_is_ascending() {
        let g = log_grid(1, 10_000, 41);
        assert_eq!(g.first(), Some(&1));
        assert_eq!(g.last(), Some(&10_000));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
