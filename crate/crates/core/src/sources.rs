//! Emitter-ensemble source models and the noise-robustness solvers.
//!
//! A [`SourceSpec`] describes `N` independent emitters, each giving a photon
//! per time bin with probability `eta1` (two photons with `eta2`), optionally
//! with background light, a decaying emitter population, a random emitter
//! count or a random per-emitter efficiency. Vacuum probabilities are always
//! assembled from per-mode generating functions, never from sampled or
//! convolved photon-number tables.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{self, CriterionResult};
use crate::error::{check_non_negative, check_positive, check_probability, param, Error, Result};
use crate::fock::{self, LightSource, PhotonNumberDistribution, SourceComposition};
use crate::numeric::{self, binomial_pmf, ln_choose, log_sum_exp, ROOT_TOLERANCE};
use crate::rng;

/// Distribution of the number of emitters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NumberModel {
    /// Explicit probabilities for `N = 0, 1, 2, ...`.
    Pmf {
        pmf: Vec<f64>,
    },
    Binomial {
        trials: u64,
        p: f64,
    },
    Poisson {
        mean: f64,
    },
    /// Bose-Einstein (geometric) emitter number.
    Geometric {
        mean: f64,
    },
}

impl NumberModel {
    pub fn statistics(&self) -> Result<NumberStatistics> {
        match self {
            NumberModel::Pmf { pmf } => NumberStatistics::from_pmf(pmf.clone()),
            NumberModel::Binomial { trials, p } => {
                check_probability("p", *p)?;
                NumberStatistics::from_pmf(
                    (0..=*trials)
                        .map(|k| binomial_pmf(*trials, k, *p))
                        .collect(),
                )
            }
            NumberModel::Poisson { mean } => {
                check_non_negative("mean", *mean)?;
                NumberStatistics::from_pmf(fock::poisson_table(*mean)?)
            }
            NumberModel::Geometric { mean } => {
                check_non_negative("mean", *mean)?;
                NumberStatistics::from_pmf(fock::thermal_table(*mean)?)
            }
        }
    }
}

/// Probability mass over the emitter count with its first two moments.
#[derive(Clone, Debug, PartialEq)]
pub struct NumberStatistics {
    pmf: Vec<f64>,
    mean: f64,
    variance: f64,
}

impl NumberStatistics {
    pub fn from_pmf(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(param("pmf", "empty emitter-number distribution"));
        }
        if pmf.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(param("pmf", "entries must lie in [0, 1]"));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(param("pmf", format!("entries sum to {total}, not 1")));
        }
        let pmf: Vec<f64> = pmf.into_iter().map(|p| p / total).collect();
        let mean = pmf
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum::<f64>();
        let variance = pmf
            .iter()
            .enumerate()
            .map(|(n, p)| (n as f64 - mean).powi(2) * p)
            .sum::<f64>();
        Ok(Self {
            pmf,
            mean,
            variance,
        })
    }

    pub fn fixed(n: u64) -> Self {
        let mut pmf = vec![0.0; n as usize + 1];
        pmf[n as usize] = 1.0;
        Self {
            pmf,
            mean: n as f64,
            variance: 0.0,
        }
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// `ln E[exp(N·x)]`.
    pub fn log_mgf(&self, x: f64) -> f64 {
        if self.variance == 0.0 {
            return self.mean * x;
        }
        log_sum_exp(
            self.pmf
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(n, p)| {
                    let term = if n == 0 { 0.0 } else { n as f64 * x };
                    p.ln() + term
                }),
        )
    }
}

/// Emitter count: a fixed number or a distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmitterCount {
    Fixed(u64),
    Distributed(NumberModel),
}

/// Background light entering the detectors together with the emitters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    #[default]
    None,
    /// One thermal mode of mean `nbar` attached to every emitter.
    PerEmitter { nbar: f64 },
    /// One thermal mode of mean `nbar` shared by the whole ensemble.
    Common { nbar: f64 },
    /// Poissonian background with the given mean photon number per bin.
    Poissonian { mean: f64 },
}

/// Exponential loss of emitters from the ensemble during a measurement
/// window `[t0, t0 + t_m]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decay {
    pub tau_s: f64,
    #[serde(default)]
    pub t0: f64,
    pub t_m: f64,
}

/// Per-emitter random efficiency, drawn independently for each emitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaFluctuation {
    Uniform { low: f64, high: f64 },
    Discrete { values: Vec<f64>, weights: Vec<f64> },
}

impl EtaFluctuation {
    pub fn validate(&self) -> Result<()> {
        match self {
            EtaFluctuation::Uniform { low, high } => {
                check_probability("low", *low)?;
                check_probability("high", *high)?;
                if low > high {
                    return Err(param("high", "upper bound below lower bound"));
                }
            }
            EtaFluctuation::Discrete { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(param("weights", "need one weight per value"));
                }
                for v in values {
                    check_probability("values", *v)?;
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                    return Err(param(
                        "weights",
                        "weights must be non-negative with a positive sum",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            EtaFluctuation::Uniform { low, high } => 0.5 * (low + high),
            EtaFluctuation::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            EtaFluctuation::Uniform { low, high } => {
                if low == high {
                    *low
                } else {
                    rng.random_range(*low..*high)
                }
            }
            EtaFluctuation::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                *values.last().expect("validated non-empty")
            }
        }
    }
}

/// Declarative description of an emitter ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub emitters: EmitterCount,
    /// Single-photon probability per emitter and time bin. When
    /// `eta_fluctuation` is given this must equal its mean.
    pub eta1: f64,
    #[serde(default)]
    pub eta2: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<Decay>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_fluctuation: Option<EtaFluctuation>,
}

impl SourceSpec {
    /// `n` ideal single-photon emitters of efficiency `eta`.
    pub fn ensemble(n: u64, eta: f64) -> Self {
        Self {
            emitters: EmitterCount::Fixed(n),
            eta1: eta,
            eta2: 0.0,
            noise: NoiseModel::None,
            decay: None,
            eta_fluctuation: None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_two_photon(mut self, eta2: f64) -> Self {
        self.eta2 = eta2;
        self
    }

    pub fn with_decay(mut self, decay: Decay) -> Self {
        self.decay = Some(decay);
        self
    }

    pub fn with_number_model(mut self, model: NumberModel) -> Self {
        self.emitters = EmitterCount::Distributed(model);
        self
    }

    pub fn with_eta_fluctuation(mut self, fluctuation: EtaFluctuation) -> Self {
        self.eta1 = fluctuation.mean();
        self.eta_fluctuation = Some(fluctuation);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("eta1", self.eta1)?;
        check_probability("eta2", self.eta2)?;
        if self.eta1 + self.eta2 > 1.0 {
            return Err(param("eta2", "eta1 + eta2 exceeds one"));
        }
        match &self.noise {
            NoiseModel::None => {}
            NoiseModel::PerEmitter { nbar } | NoiseModel::Common { nbar } => {
                check_non_negative("nbar", *nbar)?
            }
            NoiseModel::Poissonian { mean } => check_non_negative("mean", *mean)?,
        }
        if let Some(decay) = &self.decay {
            check_positive("tau_s", decay.tau_s)?;
            check_non_negative("t0", decay.t0)?;
            check_positive("t_m", decay.t_m)?;
        }
        if let Some(f) = &self.eta_fluctuation {
            f.validate()?;
            if (f.mean() - self.eta1).abs() > 1e-12 {
                return Err(param(
                    "eta1",
                    format!(
                        "{} differs from the fluctuation mean {}",
                        self.eta1,
                        f.mean()
                    ),
                ));
            }
            if f.mean() + self.eta2 > 1.0 {
                return Err(param("eta2", "eta1 + eta2 exceeds one"));
            }
        }
        if let EmitterCount::Distributed(model) = &self.emitters {
            model.statistics()?;
        }
        Ok(())
    }

    pub fn number_statistics(&self) -> Result<NumberStatistics> {
        match &self.emitters {
            EmitterCount::Fixed(n) => Ok(NumberStatistics::fixed(*n)),
            EmitterCount::Distributed(model) => model.statistics(),
        }
    }

    pub fn mean_emitters(&self) -> Result<f64> {
        match &self.emitters {
            EmitterCount::Fixed(n) => Ok(*n as f64),
            EmitterCount::Distributed(model) => Ok(model.statistics()?.mean()),
        }
    }

    /// Single-emitter photon-number distribution per bin.
    pub fn emitter_distribution(&self) -> Result<PhotonNumberDistribution> {
        PhotonNumberDistribution::imperfect_emitter(self.eta1, self.eta2)
    }

    /// Independent-mode composition for a fixed emitter count without decay.
    /// `None` for specs whose vacuum probability is an average over emitter
    /// number or time.
    pub fn composition(&self) -> Result<Option<SourceComposition>> {
        self.validate()?;
        let n = match (&self.emitters, &self.decay) {
            (EmitterCount::Fixed(n), None) => *n,
            _ => return Ok(None),
        };
        let mut comp = SourceComposition::new().with_copies(self.emitter_distribution()?, n);
        match self.noise {
            NoiseModel::None => {}
            NoiseModel::PerEmitter { nbar } => {
                comp.push(PhotonNumberDistribution::thermal(nbar, 0)?, n)
            }
            NoiseModel::Common { nbar } => {
                comp.push(PhotonNumberDistribution::thermal(nbar, 0)?, 1)
            }
            NoiseModel::Poissonian { mean } => {
                comp.push(PhotonNumberDistribution::poissonian(mean, 0)?, 1)
            }
        }
        Ok(Some(comp))
    }

    /// Photon-level coincidence figures behind the two-photon variance bound
    /// for a balanced two-detector split.
    pub fn two_photon_report(&self) -> TwoPhotonReport {
        let p_single = self.eta1 / 2.0;
        let p_coincidence = self.eta2 / 2.0;
        TwoPhotonReport {
            p_single,
            p_coincidence,
            g2: if p_single > 0.0 {
                p_coincidence / (p_single * p_single)
            } else {
                f64::NAN
            },
        }
    }

    // 1 - E[(1-s)^n] for one emitter that is present
    fn emitter_deficit(&self, s: f64) -> f64 {
        self.eta1 * s + self.eta2 * s * (2.0 - s)
    }

    fn per_emitter_noise(&self, s: f64) -> f64 {
        match self.noise {
            NoiseModel::PerEmitter { nbar } => -(nbar * s).ln_1p(),
            _ => 0.0,
        }
    }

    fn common_noise(&self, s: f64) -> f64 {
        match self.noise {
            NoiseModel::Common { nbar } => -(nbar * s).ln_1p(),
            NoiseModel::Poissonian { mean } => -mean * s,
            _ => 0.0,
        }
    }

    fn log_no_click_unchecked(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(0.0);
        }
        let stats = self.number_statistics()?;
        let deficit = self.emitter_deficit(s);
        let noise = self.per_emitter_noise(s);
        // log no-click of one emitter slot when the emitter is still present
        // with probability `presence`
        let per_emitter = |presence: f64| (-presence * deficit).ln_1p() + noise;
        let ensemble = |presence: f64| stats.log_mgf(per_emitter(presence));
        let photonic = match &self.decay {
            None => ensemble(1.0),
            Some(decay) => {
                let start = decay.t0;
                let end = decay.t0 + decay.t_m;
                let presence = |t: f64| (-t / decay.tau_s).exp();
                // the integrand grows with t as emitters leave
                let scale = ensemble(presence(end)).max(ensemble(presence(start)));
                let integral = numeric::integrate(
                    |t| (ensemble(presence(t)) - scale).exp(),
                    start,
                    end,
                    1e-13,
                    0.0,
                )?;
                scale + (integral / (end - start)).ln()
            }
        };
        Ok((photonic + self.common_noise(s)).min(0.0))
    }

    /// Single-arm and all-arm log vacuum probabilities behind a symmetric
    /// `m`-way split with detector efficiency `detection_efficiency` and
    /// extra transmittance `t`.
    pub fn vacuum_logprobs(&self, m: u32, detection_efficiency: f64, t: f64) -> Result<(f64, f64)> {
        vacuum_logprobs(self, m, detection_efficiency, t)
    }
}

impl LightSource for SourceSpec {
    fn log_no_click(&self, s: f64) -> Result<f64> {
        check_probability("s", s)?;
        self.validate()?;
        self.log_no_click_unchecked(s)
    }

    fn mean_photon_number(&self) -> Result<f64> {
        self.validate()?;
        let presence = match &self.decay {
            None => 1.0,
            Some(d) => {
                if d.t_m == 0.0 {
                    (-d.t0 / d.tau_s).exp()
                } else {
                    d.tau_s / d.t_m * ((-d.t0 / d.tau_s).exp() - (-(d.t0 + d.t_m) / d.tau_s).exp())
                }
            }
        };
        let per_emitter = presence * (self.eta1 + 2.0 * self.eta2)
            + match self.noise {
                NoiseModel::PerEmitter { nbar } => nbar,
                _ => 0.0,
            };
        let common = match self.noise {
            NoiseModel::Common { nbar } => nbar,
            NoiseModel::Poissonian { mean } => mean,
            _ => 0.0,
        };
        Ok(self.mean_emitters()? * per_emitter + common)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhotonReport {
    /// Probability of a click at one detector, `≈ η₁/2`.
    pub p_single: f64,
    /// Probability of a coincidence, `≈ η₂/2`.
    pub p_coincidence: f64,
    /// `P_C / P_S²`, the zero-delay intensity correlation for weak emitters.
    pub g2: f64,
}

/// Single-arm and all-arm log vacuum probabilities of `spec` behind a
/// symmetric `m`-way split.
pub fn vacuum_logprobs(
    spec: &SourceSpec,
    m: u32,
    detection_efficiency: f64,
    t: f64,
) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(param("M", "need at least two detectors"));
    }
    check_probability("detection_efficiency", detection_efficiency)?;
    check_probability("T", t)?;
    spec.validate()?;
    let s_all = t * detection_efficiency;
    Ok((
        spec.log_no_click_unchecked(s_all / m as f64)?,
        spec.log_no_click_unchecked(s_all)?,
    ))
}

/// Criterion margin for a balanced two-detector test with ideal detection.
fn two_detector_margin(spec: &SourceSpec) -> Result<f64> {
    let (lp0, lp0m) = vacuum_logprobs(spec, 2, 1.0, 1.0)?;
    Ok(criteria::margin(lp0, lp0m, 2))
}

/// Where the thermal background sits relative to the emitters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseGeometry {
    /// Every emitter carries its own thermal mode.
    PerEmitter,
    /// One thermal mode for the whole ensemble.
    Common,
}

impl NoiseGeometry {
    fn noise(self, nbar: f64) -> NoiseModel {
        match self {
            NoiseGeometry::PerEmitter => NoiseModel::PerEmitter { nbar },
            NoiseGeometry::Common => NoiseModel::Common { nbar },
        }
    }
}

/// Minimal efficiency for nonclassicality with per-emitter thermal noise:
/// `n̄/(1+n̄)`, independent of the ensemble size.
pub fn noise_threshold_per_emitter(nbar: f64) -> Result<f64> {
    check_non_negative("nbar", nbar)?;
    Ok(nbar / (1.0 + nbar))
}

/// Minimal efficiency for nonclassicality with one thermal mode shared by
/// `n` emitters, found by root search on the two-detector criterion. Tends
/// to `n̄/√N` for weak noise.
pub fn noise_threshold_common(nbar: f64, n: u64) -> Result<f64> {
    numeric_noise_threshold(NoiseGeometry::Common, nbar, n)
}

/// Root of the two-detector criterion margin in `η` for `n` emitters with
/// thermal noise of mean `nbar` in the given geometry.
pub fn numeric_noise_threshold(geometry: NoiseGeometry, nbar: f64, n: u64) -> Result<f64> {
    check_non_negative("nbar", nbar)?;
    if n == 0 {
        return Err(param("N", "need at least one emitter"));
    }
    if nbar == 0.0 {
        return Ok(0.0);
    }
    let margin = |eta: f64| {
        two_detector_margin(&SourceSpec::ensemble(n, eta).with_noise(geometry.noise(nbar)))
    };
    let seed = match geometry {
        NoiseGeometry::PerEmitter => nbar / (1.0 + nbar),
        NoiseGeometry::Common => (nbar / (n as f64).sqrt()).min(0.5),
    };
    let mut lo = seed * 0.5;
    let mut hi = (seed * 2.0).min(1.0);
    let mut guard = 0;
    while margin(lo)? > 0.0 {
        lo *= 0.5;
        guard += 1;
        if guard > 200 {
            return Err(Error::Numeric {
                what: "noise threshold",
                reason: format!("criterion violated down to eta = {lo:e}"),
            });
        }
    }
    while margin(hi)? <= 0.0 {
        if hi >= 1.0 {
            return Err(Error::Infeasible(format!(
                "no efficiency reaches nonclassicality for nbar = {nbar}, N = {n}"
            )));
        }
        lo = hi;
        hi = (hi * 2.0).min(1.0);
    }
    let tol = ROOT_TOLERANCE.min(seed * 1e-7);
    numeric::bisect(margin, lo, hi, tol, "noise threshold")
}

/// Tolerance of per-emitter-noise nonclassicality to attenuation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Robustness {
    /// `η > n̄`: no attenuation removes the nonclassicality.
    Absolute,
    /// Nonclassical for every transmittance above `t_min`.
    MinTransmittance { t_min: f64 },
    /// The bound `required` exceeds one: not nonclassical at any `T ≤ 1`.
    Never { required: f64 },
}

/// Smallest transmittance keeping a per-emitter-noise ensemble nonclassical,
/// `(n̄ − η)/(η n̄)`.
pub fn attenuation_robustness(eta: f64, nbar: f64) -> Result<Robustness> {
    check_probability("eta", eta)?;
    check_non_negative("nbar", nbar)?;
    if eta == 0.0 {
        return Err(Error::Domain {
            what: "attenuation robustness",
            reason: "eta = 0 has no single-photon component".into(),
        });
    }
    if eta > nbar {
        return Ok(Robustness::Absolute);
    }
    let required = (nbar - eta) / (eta * nbar);
    if required > 1.0 {
        Ok(Robustness::Never { required })
    } else {
        Ok(Robustness::MinTransmittance { t_min: required })
    }
}

/// Root search for the smallest transmittance keeping one emitter with
/// per-emitter thermal noise nonclassical. `None` when even `T = 1` fails.
pub fn numeric_min_transmittance(eta: f64, nbar: f64) -> Result<Option<f64>> {
    let spec = SourceSpec::ensemble(1, eta).with_noise(NoiseModel::PerEmitter { nbar });
    let margin = |t: f64| -> Result<f64> {
        let (lp0, lp0m) = vacuum_logprobs(&spec, 2, 1.0, t)?;
        Ok(criteria::margin(lp0, lp0m, 2))
    };
    if margin(1.0)? <= 0.0 {
        return Ok(None);
    }
    let floor = 1e-12;
    if margin(floor)? > 0.0 {
        return Ok(Some(0.0));
    }
    numeric::bisect(
        margin,
        floor,
        1.0,
        ROOT_TOLERANCE,
        "transmittance threshold",
    )
    .map(Some)
}

/// Criterion for a random emitter count: compares `⟨(1-η/M)^N⟩^M` with
/// `⟨(1-η)^N⟩`, both computed exactly over the distribution.
pub fn fluctuating_n_criterion(
    stats: &NumberStatistics,
    eta: f64,
    m: u32,
) -> Result<CriterionResult> {
    check_probability("eta", eta)?;
    if m < 2 {
        return Err(param("M", "need at least two detectors"));
    }
    let log_p0 = stats.log_mgf((-eta / m as f64).ln_1p());
    let log_p0m = stats.log_mgf((-eta).ln_1p());
    criteria::evaluate(log_p0.min(0.0), log_p0m.min(0.0), m)
}

/// Factor `1 − 2η₂/η₁²` bounding the emitter-number variance,
/// `V(N) < (1 − 2η₂/η₁²)⟨N⟩`. Negative values mean no number statistics
/// can compensate the two-photon contribution.
pub fn subpoissonian_bound(eta1: f64, eta2: f64) -> Result<f64> {
    check_non_negative("eta2", eta2)?;
    if !(eta1 > 0.0) {
        return Err(Error::Domain {
            what: "sub-Poissonian bound",
            reason: "eta1 must be positive".into(),
        });
    }
    Ok(1.0 - 2.0 * eta2 / (eta1 * eta1))
}

/// Photon-number distribution of `n` emitters of efficiency `eta`.
pub fn binomial_ensemble(n: u64, eta: f64) -> Result<PhotonNumberDistribution> {
    check_probability("eta", eta)?;
    PhotonNumberDistribution::from_probs((0..=n).map(|k| binomial_pmf(n, k, eta)).collect())
}

/// Photon-number distribution at time `t` of `n` emitters that each stay in
/// the ensemble with probability `exp(-t/τ_s)`: a binomial law with the
/// effective efficiency `η·exp(-t/τ_s)`.
pub fn decay_distribution(
    n: u64,
    eta: f64,
    tau_s: f64,
    t: f64,
) -> Result<PhotonNumberDistribution> {
    check_probability("eta", eta)?;
    check_positive("tau_s", tau_s)?;
    check_non_negative("t", t)?;
    binomial_ensemble(n, eta * (-t / tau_s).exp())
}

/// The same distribution by the explicit double sum over surviving
/// emitters `k` and emitted photons `n`.
pub fn decay_distribution_direct(
    n: u64,
    eta: f64,
    tau_s: f64,
    t: f64,
) -> Result<PhotonNumberDistribution> {
    check_probability("eta", eta)?;
    check_positive("tau_s", tau_s)?;
    check_non_negative("t", t)?;
    let survive = (-t / tau_s).exp();
    let probs = (0..=n)
        .map(|photons| {
            (photons..=n)
                .map(|k| {
                    binomial_pmf(n, k, survive)
                        * (ln_choose(k, photons)).exp()
                        * eta.powi(photons as i32)
                        * (1.0 - eta).powi((k - photons) as i32)
                })
                .sum::<f64>()
        })
        .collect();
    PhotonNumberDistribution::from_probs(probs)
}

/// Time-averaged `(ln⟨P₀⟩, ln⟨P₀^{⊗M}⟩)` for `n` decaying emitters over the
/// window `[t0, t0 + t_m]`.
pub fn averaged_vacuum(
    n: u64,
    eta: f64,
    tau_s: f64,
    t0: f64,
    t_m: f64,
    m: u32,
) -> Result<(f64, f64)> {
    let spec = SourceSpec::ensemble(n, eta).with_decay(Decay { tau_s, t0, t_m });
    vacuum_logprobs(&spec, m, 1.0, 1.0)
}

/// Largest emitter count for which averaging over the decay during `t_m`
/// keeps the weak-emitter criterion satisfied:
/// `t_m / (t_m − 2τ_s tanh(t_m / 2τ_s))`.
pub fn max_emitters_decay(t_m: f64, tau_s: f64) -> Result<f64> {
    check_positive("t_m", t_m)?;
    check_positive("tau_s", tau_s)?;
    let a = t_m / tau_s;
    if a < 1e-2 {
        // a - 2 tanh(a/2) = a³/12 (1 - a²/10 + 17a⁴/1680 - ...)
        let a2 = a * a;
        return Ok(12.0 / a2 / (1.0 - a2 / 10.0 + 17.0 * a2 * a2 / 1680.0));
    }
    Ok(a / (a - 2.0 * (a / 2.0).tanh()))
}

/// The short-window approximation `τ_s²/t_m²` quoted alongside the bound.
pub fn max_emitters_decay_approx(t_m: f64, tau_s: f64) -> Result<f64> {
    check_positive("t_m", t_m)?;
    check_positive("tau_s", tau_s)?;
    Ok((tau_s / t_m).powi(2))
}

/// Leading term of [`max_emitters_decay`] for `t_m ≪ τ_s`: `12 τ_s²/t_m²`.
pub fn max_emitters_decay_leading(t_m: f64, tau_s: f64) -> Result<f64> {
    Ok(12.0 * max_emitters_decay_approx(t_m, tau_s)?)
}

/// Vacuum probabilities for `n` emitters with independent random
/// efficiencies of common mean `mean_eta`; they depend on the mean only.
pub fn fluctuating_eta_vacuum(mean_eta: f64, n: u64, m: u32) -> Result<(f64, f64)> {
    check_probability("mean_eta", mean_eta)?;
    if m < 2 {
        return Err(param("M", "need at least two detectors"));
    }
    let nf = n as f64;
    Ok((
        nf * (-mean_eta / m as f64).ln_1p(),
        nf * (-mean_eta).ln_1p(),
    ))
}

/// Sampled check that `⟨Π(1-ηᵢ/M)⟩` and `⟨Π(1-ηᵢ)⟩` factorise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationCheck {
    pub draws: u64,
    pub p0_mean: f64,
    pub p0_se: f64,
    pub p0m_mean: f64,
    pub p0m_se: f64,
}

/// Draws `draws` independent efficiency vectors of length `n` and averages
/// the two vacuum products.
pub fn fluctuating_eta_monte_carlo(
    fluctuation: &EtaFluctuation,
    n: u64,
    m: u32,
    draws: u64,
    seed: u64,
    partitions: u64,
) -> Result<FactorizationCheck> {
    fluctuation.validate()?;
    if draws < 2 {
        return Err(param("draws", "need at least two draws"));
    }
    let mf = m as f64;
    let sums = rng::partition(draws, partitions)
        .into_par_iter()
        .enumerate()
        .map(|(idx, range)| {
            let mut r = rng::substream(seed, idx as u64);
            let mut acc = [0.0f64; 4];
            for _ in range {
                let (mut p0, mut p0m) = (1.0, 1.0);
                for _ in 0..n {
                    let eta = fluctuation.sample(&mut r);
                    p0 *= 1.0 - eta / mf;
                    p0m *= 1.0 - eta;
                }
                acc[0] += p0;
                acc[1] += p0 * p0;
                acc[2] += p0m;
                acc[3] += p0m * p0m;
            }
            acc
        })
        .reduce(
            || [0.0; 4],
            |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]],
        );
    let d = draws as f64;
    let se = |sum: f64, sq: f64| {
        let mean = sum / d;
        ((sq / d - mean * mean).max(0.0) / (d - 1.0)).sqrt()
    };
    Ok(FactorizationCheck {
        draws,
        p0_mean: sums[0] / d,
        p0_se: se(sums[0], sums[1]),
        p0m_mean: sums[2] / d,
        p0m_se: se(sums[2], sums[3]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn noiseless_ensemble_vacuum() {
        let spec = SourceSpec::ensemble(1000, 0.002);
        let (lp0, lp0m) = spec.vacuum_logprobs(2, 1.0, 1.0).unwrap();
        assert!(close(lp0, 1000.0 * (1.0f64 - 0.001).ln(), 1e-12));
        assert!(close(lp0m, 1000.0 * (1.0f64 - 0.002).ln(), 1e-12));
    }

    #[test]
    fn common_thermal_without_emitters() {
        let nbar = 0.37;
        let spec = SourceSpec::ensemble(0, 0.1).with_noise(NoiseModel::Common { nbar });
        let (_, lp0m) = spec.vacuum_logprobs(2, 0.8, 1.0).unwrap();
        assert!(close(lp0m, -(1.0f64 + 0.8 * nbar).ln(), 1e-15));
    }

    #[test]
    fn zero_noise_is_no_noise() {
        let base = SourceSpec::ensemble(57, 0.03);
        let noisy = base
            .clone()
            .with_noise(NoiseModel::PerEmitter { nbar: 0.0 });
        assert_eq!(
            base.vacuum_logprobs(3, 0.9, 0.7).unwrap(),
            noisy.vacuum_logprobs(3, 0.9, 0.7).unwrap()
        );
    }

    #[test]
    fn composition_matches_spec() {
        let spec = SourceSpec::ensemble(40, 0.05)
            .with_two_photon(0.001)
            .with_noise(NoiseModel::PerEmitter { nbar: 0.02 });
        let comp = spec.composition().unwrap().unwrap();
        for s in [0.1, 0.5, 1.0] {
            assert!(close(
                comp.no_click_prob(s),
                spec.log_no_click(s).unwrap(),
                1e-12
            ));
        }
        let decaying = spec.with_decay(Decay {
            tau_s: 1.0,
            t0: 0.0,
            t_m: 0.1,
        });
        assert!(decaying.composition().unwrap().is_none());
    }

    #[test]
    fn per_emitter_threshold_formula() {
        assert_eq!(noise_threshold_per_emitter(0.0).unwrap(), 0.0);
        assert!(close(noise_threshold_per_emitter(1.0).unwrap(), 0.5, 1e-15));
        for n in [1, 10, 100] {
            let t = numeric_noise_threshold(NoiseGeometry::PerEmitter, 0.1, n).unwrap();
            assert!(close(t, 0.1 / 1.1, 1e-6), "N = {n}: {t}");
        }
    }

    #[test]
    fn common_threshold_examples() {
        let t = noise_threshold_common(1e-3, 10_000).unwrap();
        assert!(close(t / 1e-5, 1.0, 0.01), "{t}");
        // a single emitter sees both geometries identically
        let t1 = noise_threshold_common(0.01, 1).unwrap();
        assert!(close(t1, 0.01 / 1.01, 1e-8));
    }

    #[test]
    fn common_threshold_strong_noise() {
        let t = noise_threshold_common(50.0, 1).unwrap();
        assert!(close(t, 50.0 / 51.0, 1e-8), "{t}");
    }

    #[test]
    fn robustness_examples() {
        assert_eq!(
            attenuation_robustness(0.2, 0.1).unwrap(),
            Robustness::Absolute
        );
        match attenuation_robustness(0.1, 0.2).unwrap() {
            Robustness::Never { required } => assert!(close(required, 5.0, 1e-12)),
            other => panic!("{other:?}"),
        }
        match attenuation_robustness(0.5, 0.6).unwrap() {
            Robustness::MinTransmittance { t_min } => assert!(close(t_min, 1.0 / 3.0, 1e-12)),
            other => panic!("{other:?}"),
        }
        assert!(attenuation_robustness(0.0, 0.5).is_err());
        let t = numeric_min_transmittance(0.5, 0.6).unwrap().unwrap();
        assert!(close(t, 1.0 / 3.0, 1e-8));
        assert_eq!(numeric_min_transmittance(0.1, 0.2).unwrap(), None);
    }

    #[test]
    fn subpoissonian_examples() {
        assert_eq!(subpoissonian_bound(0.3, 0.0).unwrap(), 1.0);
        assert!(close(subpoissonian_bound(0.01, 5e-5).unwrap(), 0.0, 1e-12));
        assert!(close(subpoissonian_bound(0.01, 1e-4).unwrap(), -1.0, 1e-12));
        assert!(subpoissonian_bound(0.0, 1e-4).is_err());
    }

    #[test]
    fn fixed_number_reduces_to_ensemble() {
        let r = fluctuating_n_criterion(&NumberStatistics::fixed(300), 0.004, 2).unwrap();
        let (lp0, lp0m) = SourceSpec::ensemble(300, 0.004)
            .vacuum_logprobs(2, 1.0, 1.0)
            .unwrap();
        assert!(close(r.log_p0, lp0, 1e-12) && close(r.log_p0m, lp0m, 1e-12));
        assert!(r.violated);
    }

    #[test]
    fn geometric_number_is_classical() {
        for mean in [10.0, 100.0] {
            let stats = NumberModel::Geometric { mean }.statistics().unwrap();
            assert!(!fluctuating_n_criterion(&stats, 1e-2, 2).unwrap().violated);
        }
    }

    #[test]
    fn decay_distribution_examples() {
        let d0 = decay_distribution(6, 0.3, 2.0, 0.0).unwrap();
        let b = binomial_ensemble(6, 0.3).unwrap();
        for (x, y) in d0.probs().iter().zip(b.probs()) {
            assert!(close(*x, *y, 1e-15));
        }
        let d = decay_distribution(6, 0.3, 2.0, 2.0).unwrap();
        let b = binomial_ensemble(6, 0.3 / std::f64::consts::E).unwrap();
        for (x, y) in d.probs().iter().zip(b.probs()) {
            assert!(close(*x, *y, 1e-15));
        }
        let direct = decay_distribution_direct(5, 0.3, 1.0, 0.7).unwrap();
        let fast = decay_distribution(5, 0.3, 1.0, 0.7).unwrap();
        for (x, y) in direct.probs().iter().zip(fast.probs()) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn max_emitters_examples() {
        let v = max_emitters_decay(1.0, 1.0).unwrap();
        assert!(close(v, 1.0 / (1.0 - 2.0 * 0.5f64.tanh()), 1e-12));
        assert!(close(v, 13.2, 0.05));
        // series and closed form agree where both are accurate
        let a = 0.01f64;
        let direct = a / (a - 2.0 * (a / 2.0).tanh());
        let series = max_emitters_decay(a * 0.999_999, 1.0).unwrap();
        assert!(close(series / direct, 1.0, 1e-5));
        let lead = max_emitters_decay_leading(1e-3, 1.0).unwrap();
        assert!(close(
            max_emitters_decay(1e-3, 1.0).unwrap() / lead,
            1.0,
            1e-6
        ));
    }

    #[test]
    fn averaged_vacuum_limits() {
        let (n, eta, m) = (50, 0.01, 2);
        let (s0, s0m) = SourceSpec::ensemble(n, eta)
            .vacuum_logprobs(m, 1.0, 1.0)
            .unwrap();
        let (a0, a0m) = averaged_vacuum(n, eta, 1e12, 0.0, 1.0, m).unwrap();
        assert!(close(a0, s0, 1e-10) && close(a0m, s0m, 1e-10));
        // a very short window reproduces the instantaneous value at t0
        let t0: f64 = 0.4;
        let eff = eta * (-t0).exp();
        let (i0, i0m) = SourceSpec::ensemble(n, eff)
            .vacuum_logprobs(m, 1.0, 1.0)
            .unwrap();
        let (w0, w0m) = averaged_vacuum(n, eta, 1.0, t0, 1e-9, m).unwrap();
        assert!(
            close(w0, i0, 1e-9) && close(w0m, i0m, 1e-9),
            "{w0} {i0} {w0m} {i0m}"
        );
    }

    #[test]
    fn fluctuating_eta_formula() {
        let (lp0, lp0m) = fluctuating_eta_vacuum(0.01, 500, 2).unwrap();
        assert!(close(lp0, 500.0 * (0.995f64).ln(), 1e-12));
        assert!(close(lp0m, 500.0 * (0.99f64).ln(), 1e-12));
        let degenerate = EtaFluctuation::Discrete {
            values: vec![0.01],
            weights: vec![1.0],
        };
        let spec = SourceSpec::ensemble(500, 0.0).with_eta_fluctuation(degenerate);
        let (s0, s0m) = spec.vacuum_logprobs(2, 1.0, 1.0).unwrap();
        assert!(close(s0, lp0, 1e-12) && close(s0m, lp0m, 1e-12));
    }

    #[test]
    fn fluctuation_mean_must_match_eta1() {
        let mut spec = SourceSpec::ensemble(5, 0.0).with_eta_fluctuation(EtaFluctuation::Uniform {
            low: 0.0,
            high: 0.02,
        });
        assert!(spec.validate().is_ok());
        spec.eta1 = 0.3;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn two_photon_report() {
        let r = SourceSpec::ensemble(1, 0.01)
            .with_two_photon(5e-5)
            .two_photon_report();
        assert!(close(r.g2, 1.0, 1e-12));
    }
}
