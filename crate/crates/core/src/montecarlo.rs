//! Bin-by-bin simulation of the detection experiment.
//!
//! Open bins are split into a fixed number of contiguous partitions, each
//! driven by its own random substream and starting with all detectors live,
//! so tallies depend only on the seed and the configuration.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::criteria;
use crate::detection::{BinOutcome, DetectorNetwork};
use crate::error::{check_probability, param, Error, Result};
use crate::rng::{self, StreamRng};
use crate::sources::{EmitterCount, NoiseModel, SourceSpec};

/// Partition count used unless the caller asks otherwise.
pub const DEFAULT_PARTITIONS: u64 = 64;

/// One simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Wall-clock bins covered by the run.
    pub bins: u64,
    /// Fraction of bins with the detectors open.
    pub duty_cycle: f64,
    pub spec: SourceSpec,
    pub net: DetectorNetwork,
    /// Extra transmittance in front of the network.
    pub transmittance: f64,
    /// Independent substreams; `1` gives a single uninterrupted stream with
    /// exact dead-time coupling between all bins.
    pub partitions: u64,
}

impl SimConfig {
    pub fn new(spec: SourceSpec, net: DetectorNetwork, bins: u64, seed: u64) -> Self {
        Self {
            seed,
            bins,
            duty_cycle: 1.0,
            spec,
            net,
            transmittance: 1.0,
            partitions: DEFAULT_PARTITIONS,
        }
    }

    pub fn with_transmittance(mut self, t: f64) -> Self {
        self.transmittance = t;
        self
    }

    pub fn with_duty_cycle(mut self, duty: f64) -> Self {
        self.duty_cycle = duty;
        self
    }

    pub fn with_partitions(mut self, partitions: u64) -> Self {
        self.partitions = partitions;
        self
    }

    /// Number of bins in which detectors are open.
    pub fn open_bins(&self) -> u64 {
        (self.bins as f64 * self.duty_cycle).floor() as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.net.validate()?;
        check_probability("transmittance", self.transmittance)?;
        if self.bins == 0 {
            return Err(param("bins", "need at least one bin"));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return Err(param(
                "duty_cycle",
                format!("{} is not in (0, 1]", self.duty_cycle),
            ));
        }
        if self.partitions == 0 {
            return Err(param("partitions", "need at least one partition"));
        }
        if self.open_bins() == 0 {
            return Err(Error::Config(format!(
                "{} bins at duty cycle {} leave no open bin",
                self.bins, self.duty_cycle
            )));
        }
        Ok(())
    }

    // wall-clock index of open bin `j`: open bins are spread evenly
    fn wall_index(&self, j: u64) -> u64 {
        if self.duty_cycle >= 1.0 {
            return j;
        }
        (((j + 1) as f64 / self.duty_cycle).ceil() as u64).saturating_sub(1)
    }
}

/// Tallies of one partition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub open_bins: u64,
    /// Bins in which arm 0 stayed silent.
    pub silent_arm0: u64,
    /// Bins with no click at all.
    pub silent_all: u64,
}

/// Outcome of a simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub m: u32,
    pub seed: u64,
    pub open_bins: u64,
    pub wall_bins: u64,
    /// Open bins per click pattern, indexed by [`BinOutcome::clicks`].
    pub counts: Vec<u64>,
    pub clicks_per_arm: Vec<u64>,
    pub batches: Vec<Batch>,
    pub log_p0_hat: f64,
    pub log_p0m_hat: f64,
    /// Standard errors of the natural-log estimates.
    pub se_log_p0: f64,
    pub se_log_p0m: f64,
    /// Covariance of the two natural-log estimates.
    pub cov_log: f64,
    /// Standard error of `log₁₀ P₀^{⊗M}`.
    pub se_log10_p0m: f64,
}

impl SimEstimate {
    fn from_tallies(
        cfg: &SimConfig,
        counts: Vec<u64>,
        clicks_per_arm: Vec<u64>,
        batches: Vec<Batch>,
    ) -> Self {
        let m = cfg.net.arms() as u32;
        let n: u64 = counts.iter().sum();
        let silent_arm0: u64 = counts
            .iter()
            .enumerate()
            .filter(|(c, _)| c & 1 == 0)
            .map(|(_, k)| k)
            .sum();
        let silent_all = counts[0];
        let nf = n as f64;
        let p0 = silent_arm0 as f64 / nf;
        let p0m = silent_all as f64 / nf;
        let var = |p: f64| {
            if p > 0.0 {
                (1.0 - p) / (nf * p)
            } else {
                f64::INFINITY
            }
        };
        let var0 = var(p0);
        let var0m = var(p0m);
        // silent everywhere implies silent at arm 0
        let cov = var0;
        Self {
            m,
            seed: cfg.seed,
            open_bins: n,
            wall_bins: cfg.bins,
            counts,
            clicks_per_arm,
            batches,
            log_p0_hat: p0.ln(),
            log_p0m_hat: p0m.ln(),
            se_log_p0: var0.sqrt(),
            se_log_p0m: var0m.sqrt(),
            cov_log: cov,
            se_log10_p0m: var0m.sqrt() / std::f64::consts::LN_10,
        }
    }

    /// Mean number of clicks per arm and open bin.
    pub fn click_rate(&self) -> f64 {
        self.clicks_per_arm.iter().sum::<u64>() as f64 / (self.open_bins as f64 * self.m as f64)
    }
}

/// `d/σ_d` from a simulation, with `σ_d` from first-order propagation of
/// the tally errors including their covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub ratio: f64,
    pub d: f64,
    pub sigma_d: f64,
    pub violated: bool,
    pub diagnostic: Option<String>,
}

/// Distance-to-classical over its standard error for a simulated estimate.
pub fn significance(est: &SimEstimate, m: u32) -> Result<Significance> {
    if m != est.m {
        return Err(param("M", format!("estimate has {} arms, not {m}", est.m)));
    }
    let mf = m as f64;
    let scale = (mf * mf + 1.0).sqrt() / (mf * std::f64::consts::LN_10);
    let var_margin =
        mf * mf * est.se_log_p0.powi(2) + est.se_log_p0m.powi(2) - 2.0 * mf * est.cov_log;
    let sigma_d = scale * var_margin.max(0.0).sqrt();
    if est.log_p0_hat == f64::NEG_INFINITY {
        return Ok(Significance {
            ratio: 0.0,
            d: 0.0,
            sigma_d,
            violated: false,
            diagnostic: Some("arm 0 clicked in every bin".into()),
        });
    }
    if est.log_p0m_hat == f64::NEG_INFINITY {
        return Ok(Significance {
            ratio: f64::INFINITY,
            d: f64::INFINITY,
            sigma_d,
            violated: true,
            diagnostic: Some("no all-silent bin observed; distance unbounded".into()),
        });
    }
    let r = criteria::evaluate(est.log_p0_hat, est.log_p0m_hat, m)?;
    if !r.violated {
        return Ok(Significance {
            ratio: 0.0,
            d: 0.0,
            sigma_d,
            violated: false,
            diagnostic: Some("point estimate does not violate the criterion".into()),
        });
    }
    let (ratio, diagnostic) = if sigma_d > 0.0 {
        (r.d / sigma_d, None)
    } else {
        (f64::INFINITY, Some("zero standard error".into()))
    };
    Ok(Significance {
        ratio,
        d: r.d,
        sigma_d,
        violated: true,
        diagnostic,
    })
}

fn binomial(rng: &mut StreamRng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("probability checked")
        .sample(rng)
}

fn poisson(rng: &mut StreamRng, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    let k: f64 = Poisson::new(mean)
        .expect("finite positive mean")
        .sample(rng);
    k as u64
}

// Sampling plan shared by all partitions.
struct Sampler<'a> {
    cfg: &'a SimConfig,
    number: Option<WeightedIndex<f64>>,
    fixed_n: u64,
    arm_weights: Vec<f64>,
    dark_p: f64,
    dead_bins: u64,
}

impl<'a> Sampler<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        let (number, fixed_n) = match &cfg.spec.emitters {
            EmitterCount::Fixed(n) => (None, *n),
            EmitterCount::Distributed(model) => {
                let stats = model.statistics()?;
                let w = WeightedIndex::new(stats.pmf().to_vec()).map_err(|e| Error::Numeric {
                    what: "emitter-number sampling",
                    reason: e.to_string(),
                })?;
                (Some(w), 0)
            }
        };
        Ok(Self {
            cfg,
            number,
            fixed_n,
            arm_weights: (0..cfg.net.arms())
                .map(|i| cfg.transmittance * cfg.net.arm_weight(i))
                .collect(),
            dark_p: cfg.net.dark_click_probability(),
            dead_bins: cfg.net.dead_bins(),
        })
    }

    fn presence(&self, wall: u64) -> f64 {
        match &self.cfg.spec.decay {
            None => 1.0,
            Some(d) => {
                let t = d.t0 + (wall as f64 + 0.5) / self.cfg.bins as f64 * d.t_m;
                (-t / d.tau_s).exp()
            }
        }
    }

    fn photons(&self, rng: &mut StreamRng, wall: u64) -> u64 {
        let spec = &self.cfg.spec;
        let n = match &self.number {
            Some(w) => w.sample(rng) as u64,
            None => self.fixed_n,
        };
        let presence = self.presence(wall);
        let mut photons = match &spec.eta_fluctuation {
            Some(fluct) => {
                let mut k = 0;
                for _ in 0..n {
                    if presence < 1.0 && rng.random::<f64>() >= presence {
                        continue;
                    }
                    let eta = fluct.sample(rng);
                    let u: f64 = rng.random();
                    if u < eta {
                        k += 1;
                    } else if u < eta + spec.eta2 {
                        k += 2;
                    }
                }
                k
            }
            None => {
                let p1 = presence * spec.eta1;
                let p2 = presence * spec.eta2;
                let k1 = binomial(rng, n, p1);
                let k2 = if p2 > 0.0 {
                    binomial(rng, n - k1, p2 / (1.0 - p1))
                } else {
                    0
                };
                k1 + 2 * k2
            }
        };
        photons += match spec.noise {
            NoiseModel::None => 0,
            NoiseModel::PerEmitter { nbar } => {
                if n == 0 || nbar == 0.0 {
                    0
                } else {
                    let lambda: f64 = Gamma::new(n as f64, nbar)
                        .expect("positive shape")
                        .sample(rng);
                    poisson(rng, lambda)
                }
            }
            NoiseModel::Common { nbar } => {
                if nbar == 0.0 {
                    0
                } else {
                    let lambda: f64 = Gamma::new(1.0, nbar).expect("positive shape").sample(rng);
                    poisson(rng, lambda)
                }
            }
            NoiseModel::Poissonian { mean } => poisson(rng, mean),
        };
        photons
    }

    fn run_partition(&self, index: u64, range: std::ops::Range<u64>) -> (Vec<u64>, Vec<u64>) {
        let m = self.arm_weights.len();
        let mut rng = rng::substream(self.cfg.seed, index);
        let mut counts = vec![0u64; 1 << m];
        let mut clicks = vec![0u64; m];
        let mut dead_until = vec![0u64; m];
        for j in range {
            let wall = self.cfg.wall_index(j);
            let mut remaining = self.photons(&mut rng, wall);
            let mut outcome = BinOutcome::silent();
            let mut used = 0.0;
            for (arm, &q) in self.arm_weights.iter().enumerate() {
                let mut hit = false;
                if remaining > 0 && q > 0.0 {
                    let cond = (q / (1.0 - used)).min(1.0);
                    let detected = binomial(&mut rng, remaining, cond);
                    remaining -= detected;
                    hit = detected > 0;
                }
                used += q;
                if self.dark_p > 0.0 && rng.random::<f64>() < self.dark_p {
                    hit = true;
                }
                if hit && wall >= dead_until[arm] {
                    outcome.set(arm);
                    clicks[arm] += 1;
                    dead_until[arm] = wall + 1 + self.dead_bins;
                }
            }
            counts[outcome.clicks as usize] += 1;
        }
        (counts, clicks)
    }
}

/// Simulates the open bins of `cfg` and tallies click patterns.
pub fn run(cfg: &SimConfig) -> Result<SimEstimate> {
    cfg.validate()?;
    let sampler = Sampler::new(cfg)?;
    let m = cfg.net.arms();
    let ranges = rng::partition(cfg.open_bins(), cfg.partitions);
    let parts: Vec<(Vec<u64>, Vec<u64>)> = ranges
        .into_par_iter()
        .enumerate()
        .map(|(i, r)| sampler.run_partition(i as u64, r))
        .collect();
    let mut counts = vec![0u64; 1 << m];
    let mut clicks = vec![0u64; m];
    let mut batches = Vec::with_capacity(parts.len());
    for (c, k) in &parts {
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
        for (a, b) in clicks.iter_mut().zip(k) {
            *a += b;
        }
        batches.push(Batch {
            open_bins: c.iter().sum(),
            silent_arm0: c
                .iter()
                .enumerate()
                .filter(|(p, _)| p & 1 == 0)
                .map(|(_, k)| k)
                .sum(),
            silent_all: c[0],
        });
    }
    Ok(SimEstimate::from_tallies(cfg, counts, clicks, batches))
}

/// Pearson chi-square goodness of fit of pattern tallies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: u32,
    pub p_value: f64,
}

/// Chi-square test of `counts` against `probs`. Categories expecting fewer
/// than five events are pooled.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> Result<ChiSquareTest> {
    if counts.len() != probs.len() || counts.is_empty() {
        return Err(param("probs", "need one probability per category"));
    }
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let mut statistic = 0.0;
    let mut cells = 0u32;
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&k, &p) in counts.iter().zip(probs) {
        let e = nf * p;
        if e < 5.0 {
            pooled_obs += k as f64;
            pooled_exp += e;
        } else {
            statistic += (k as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pooled_exp > 0.0 {
        statistic += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    } else if pooled_obs > 0.0 {
        // events in categories of zero probability
        return Ok(ChiSquareTest {
            statistic: f64::INFINITY,
            dof: cells.max(1),
            p_value: 0.0,
        });
    }
    if cells < 2 {
        return Ok(ChiSquareTest {
            statistic,
            dof: 0,
            p_value: 1.0,
        });
    }
    let dof = cells - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Numeric {
        what: "chi-square",
        reason: e.to_string(),
    })?;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> DetectorNetwork {
        DetectorNetwork::two_arm_default().with_dead_time(0.0)
    }

    #[test]
    fn dark_vacuum_is_silent() {
        let cfg = SimConfig::new(SourceSpec::ensemble(100, 0.0), net(), 10_000, 1);
        let est = run(&cfg).unwrap();
        assert_eq!(est.counts[0], 10_000);
        assert_eq!(est.log_p0m_hat, 0.0);
    }

    #[test]
    fn one_photon_never_splits() {
        let cfg = SimConfig::new(SourceSpec::ensemble(1, 1.0), net(), 20_000, 2);
        let est = run(&cfg).unwrap();
        assert_eq!(est.counts[3], 0);
        assert_eq!(est.counts[0], 0);
        assert_eq!(est.counts[1] + est.counts[2], 20_000);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SimConfig::new(SourceSpec::ensemble(50, 0.05), net(), 50_000, 9);
        assert_eq!(run(&cfg).unwrap().counts, run(&cfg).unwrap().counts);
        let other = SimConfig {
            seed: 10,
            ..cfg.clone()
        };
        assert_ne!(run(&cfg).unwrap().counts, run(&other).unwrap().counts);
    }

    #[test]
    fn duty_cycle_spreads_open_bins() {
        let cfg =
            SimConfig::new(SourceSpec::ensemble(1, 0.5), net(), 1000, 0).with_duty_cycle(0.25);
        assert_eq!(cfg.open_bins(), 250);
        assert_eq!(cfg.wall_index(0), 3);
        assert_eq!(cfg.wall_index(249), 999);
        assert_eq!(run(&cfg).unwrap().open_bins, 250);
        let none = SimConfig::new(SourceSpec::ensemble(1, 0.5), net(), 3, 0).with_duty_cycle(0.25);
        assert!(matches!(run(&none), Err(Error::Config(_))));
    }

    #[test]
    fn dead_time_blocks_consecutive_clicks() {
        let live =
            SimConfig::new(SourceSpec::ensemble(1, 1.0), net(), 10_000, 3).with_partitions(1);
        let dead = SimConfig {
            net: net().with_dead_time(10e-9),
            ..live.clone()
        };
        let a = run(&live).unwrap();
        let b = run(&dead).unwrap();
        assert!(b.click_rate() < a.click_rate());
    }

    #[test]
    fn significance_of_ideal_and_classical() {
        let ideal = run(&SimConfig::new(
            SourceSpec::ensemble(1, 1.0),
            net(),
            1000,
            4,
        ))
        .unwrap();
        assert_eq!(significance(&ideal, 2).unwrap().ratio, f64::INFINITY);
        let coherent =
            SourceSpec::ensemble(0, 0.0).with_noise(NoiseModel::Poissonian { mean: 1.0 });
        let est = run(&SimConfig::new(coherent, net(), 100_000, 5)).unwrap();
        let s = significance(&est, 2).unwrap();
        assert!(s.ratio == 0.0 || s.ratio < 4.0);
        assert!(significance(&est, 3).is_err());
    }

    #[test]
    fn chi_square_examples() {
        let t = chi_square(&[50, 50], &[0.5, 0.5]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        let t = chi_square(&[90, 10], &[0.5, 0.5]).unwrap();
        assert!(t.p_value < 1e-10);
        let t = chi_square(&[99, 1], &[1.0, 0.0]).unwrap();
        assert_eq!(t.p_value, 0.0);
    }
}
