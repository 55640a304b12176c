//! Detector network: beam-splitter arms, detector efficiencies, dark counts
//! and the rate limits that drive gating.

use serde::{Deserialize, Serialize};

use crate::criteria::{self, CriterionResult};
use crate::error::{check_non_negative, check_positive, check_probability, param, Error, Result};
use crate::fock::LightSource;

/// Largest arm count for which per-pattern tallies are kept.
pub const MAX_PATTERN_ARMS: usize = 16;

const DEFAULT_GATE: f64 = 10e-9;
const DEFAULT_RATE: f64 = 500e3;
const DEFAULT_DEAD_TIME: f64 = 25e-9;

fn default_gate() -> f64 {
    DEFAULT_GATE
}
fn default_rate() -> f64 {
    DEFAULT_RATE
}
fn default_dead_time() -> f64 {
    DEFAULT_DEAD_TIME
}

/// Beam-splitter network feeding `M` binary detectors.
///
/// `split_fractions[i]` is the share of the light reaching arm `i` (their sum
/// may fall short of one to account for network loss) and
/// `arm_efficiencies[i]` the quantum efficiency of its detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorNetwork {
    pub split_fractions: Vec<f64>,
    pub arm_efficiencies: Vec<f64>,
    /// Dark counts per second per arm.
    #[serde(default)]
    pub dark_rate: f64,
    /// Time-bin length `t_b`, seconds.
    #[serde(default = "default_gate")]
    pub gate_length: f64,
    /// Highest sustainable click rate per detector, Hz.
    #[serde(default = "default_rate")]
    pub saturation_rate: f64,
    /// Highest rate at which detectors can be switched on, Hz.
    #[serde(default = "default_rate")]
    pub switch_rate: f64,
    /// Dead time after a click, seconds.
    #[serde(default = "default_dead_time")]
    pub dead_time: f64,
}

impl DetectorNetwork {
    /// Validated constructor with default rates and no dark counts.
    pub fn new(split_fractions: Vec<f64>, arm_efficiencies: Vec<f64>) -> Result<Self> {
        let net = Self {
            split_fractions,
            arm_efficiencies,
            dark_rate: 0.0,
            gate_length: DEFAULT_GATE,
            saturation_rate: DEFAULT_RATE,
            switch_rate: DEFAULT_RATE,
            dead_time: DEFAULT_DEAD_TIME,
        };
        net.validate()?;
        Ok(net)
    }

    /// Balanced `m`-way split onto detectors of equal efficiency.
    pub fn symmetric(m: usize, efficiency: f64) -> Result<Self> {
        if m < 2 {
            return Err(param("M", "need at least two detectors"));
        }
        Self::new(vec![1.0 / m as f64; m], vec![efficiency; m])
    }

    /// Two ideal detectors behind a 50:50 splitter with 10 ns bins,
    /// 500 kHz saturation and switching limits and 25 ns dead time.
    pub fn two_arm_default() -> Self {
        Self::symmetric(2, 1.0).expect("valid defaults")
    }

    pub fn with_dark_rate(mut self, rate: f64) -> Self {
        self.dark_rate = rate;
        self
    }

    pub fn with_dead_time(mut self, dead_time: f64) -> Self {
        self.dead_time = dead_time;
        self
    }

    pub fn with_saturation_rate(mut self, rate: f64) -> Self {
        self.saturation_rate = rate;
        self
    }

    pub fn with_switch_rate(mut self, rate: f64) -> Self {
        self.switch_rate = rate;
        self
    }

    pub fn with_gate_length(mut self, t_b: f64) -> Self {
        self.gate_length = t_b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.split_fractions.len();
        if m < 2 {
            return Err(param("split_fractions", "need at least two arms"));
        }
        if m > MAX_PATTERN_ARMS {
            return Err(param(
                "split_fractions",
                format!("at most {MAX_PATTERN_ARMS} arms are supported"),
            ));
        }
        if self.arm_efficiencies.len() != m {
            return Err(param(
                "arm_efficiencies",
                format!("expected {m} entries, got {}", self.arm_efficiencies.len()),
            ));
        }
        for f in &self.split_fractions {
            check_probability("split_fractions", *f)?;
        }
        if self.split_fractions.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(param("split_fractions", "fractions sum to more than one"));
        }
        for e in &self.arm_efficiencies {
            check_probability("arm_efficiencies", *e)?;
        }
        check_non_negative("dark_rate", self.dark_rate)?;
        check_positive("gate_length", self.gate_length)?;
        check_positive("saturation_rate", self.saturation_rate)?;
        check_positive("switch_rate", self.switch_rate)?;
        check_non_negative("dead_time", self.dead_time)?;
        Ok(())
    }

    pub fn arms(&self) -> usize {
        self.split_fractions.len()
    }

    /// Probability that a photon entering the network is registered at arm `i`.
    pub fn arm_weight(&self, i: usize) -> f64 {
        self.split_fractions[i] * self.arm_efficiencies[i]
    }

    /// Whether every arm registers a photon with the same probability.
    pub fn is_symmetric(&self) -> bool {
        let w0 = self.arm_weight(0);
        (1..self.arms()).all(|i| (self.arm_weight(i) - w0).abs() <= 1e-12 * w0.max(1e-300))
    }

    /// `ln` of the probability that one arm sees no dark count in a bin.
    pub fn log_dark_silence(&self) -> f64 {
        -self.dark_rate * self.gate_length
    }

    /// Probability of a dark count at one arm in one bin.
    pub fn dark_click_probability(&self) -> f64 {
        -(self.log_dark_silence().exp_m1())
    }

    /// Bins an arm stays blind after a click.
    pub fn dead_bins(&self) -> u64 {
        // tolerate representation error such as 25e-9 / 10e-9 = 2.5000000000000004
        let ratio = self.dead_time / self.gate_length;
        let rounded = ratio.round();
        if (ratio - rounded).abs() < 1e-9 * rounded.max(1.0) {
            rounded as u64
        } else {
            ratio.ceil() as u64
        }
    }
}

/// Click pattern of one time bin: bit `i` is set when arm `i` clicked. A bin
/// with several photons at one detector still yields a single click.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinOutcome {
    pub clicks: u32,
}

impl BinOutcome {
    pub fn silent() -> Self {
        Self { clicks: 0 }
    }

    pub fn clicked(&self, arm: usize) -> bool {
        self.clicks >> arm & 1 == 1
    }

    pub fn set(&mut self, arm: usize) {
        self.clicks |= 1 << arm;
    }

    pub fn click_count(&self) -> u32 {
        self.clicks.count_ones()
    }

    pub fn is_silent(&self) -> bool {
        self.clicks == 0
    }
}

fn check_subset(net: &DetectorNetwork, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(param("subset", "empty arm subset"));
    }
    let mut seen = 0u32;
    for &i in subset {
        if i >= net.arms() {
            return Err(param("subset", format!("arm {i} does not exist")));
        }
        if seen >> i & 1 == 1 {
            return Err(param("subset", format!("arm {i} listed twice")));
        }
        seen |= 1 << i;
    }
    Ok(())
}

/// `ln` of the probability that none of the arms in `subset` clicks.
pub fn arm_subset_silence(
    net: &DetectorNetwork,
    source: &impl LightSource,
    subset: &[usize],
) -> Result<f64> {
    arm_subset_silence_attenuated(net, source, subset, 1.0)
}

/// [`arm_subset_silence`] with an extra transmittance `t` in front of the
/// network.
pub fn arm_subset_silence_attenuated(
    net: &DetectorNetwork,
    source: &impl LightSource,
    subset: &[usize],
    t: f64,
) -> Result<f64> {
    net.validate()?;
    check_probability("T", t)?;
    check_subset(net, subset)?;
    let s: f64 = subset.iter().map(|&i| net.arm_weight(i)).sum::<f64>() * t;
    let photonic = source.log_no_click(s.min(1.0))?;
    Ok(photonic + subset.len() as f64 * net.log_dark_silence())
}

fn mask_silence(
    net: &DetectorNetwork,
    source: &impl LightSource,
    mask: u32,
    t: f64,
) -> Result<f64> {
    if mask == 0 {
        return Ok(0.0);
    }
    let s: f64 = (0..net.arms())
        .filter(|i| mask >> i & 1 == 1)
        .map(|i| net.arm_weight(i))
        .sum::<f64>()
        * t;
    Ok(source.log_no_click(s.min(1.0))? + mask.count_ones() as f64 * net.log_dark_silence())
}

/// `(ln P₀, ln P₀^{⊗M})` for arm 0 and the full arm set.
pub fn network_vacuum_logprobs(
    net: &DetectorNetwork,
    source: &impl LightSource,
    t: f64,
) -> Result<(f64, f64)> {
    let all: Vec<usize> = (0..net.arms()).collect();
    Ok((
        arm_subset_silence_attenuated(net, source, &[0], t)?,
        arm_subset_silence_attenuated(net, source, &all, t)?,
    ))
}

/// Click probability of every arm in one bin.
pub fn arm_click_probabilities(
    net: &DetectorNetwork,
    source: &impl LightSource,
    t: f64,
) -> Result<Vec<f64>> {
    (0..net.arms())
        .map(|i| Ok(-arm_subset_silence_attenuated(net, source, &[i], t)?.exp_m1()))
        .collect()
}

/// Criterion evaluated on the network's vacuum probabilities. The classical
/// threshold is only derived for balanced networks, so unbalanced ones are
/// refused.
pub fn criterion_from_network(
    net: &DetectorNetwork,
    source: &impl LightSource,
) -> Result<CriterionResult> {
    criterion_from_network_attenuated(net, source, 1.0)
}

pub fn criterion_from_network_attenuated(
    net: &DetectorNetwork,
    source: &impl LightSource,
    t: f64,
) -> Result<CriterionResult> {
    net.validate()?;
    if !net.is_symmetric() {
        return Err(Error::Unsupported(
            "classical threshold is only available for symmetric splitting".into(),
        ));
    }
    let (lp0, lp0m) = network_vacuum_logprobs(net, source, t)?;
    criteria::evaluate(lp0, lp0m, net.arms() as u32)
}

/// Probability of every click pattern, indexed by [`BinOutcome::clicks`],
/// by inclusion-exclusion over silent arm sets.
pub fn pattern_probabilities(
    net: &DetectorNetwork,
    source: &impl LightSource,
    t: f64,
) -> Result<Vec<f64>> {
    net.validate()?;
    check_probability("T", t)?;
    let m = net.arms();
    let full = (1u32 << m) - 1;
    let silence: Vec<f64> = (0..=full)
        .map(|mask| mask_silence(net, source, mask, t).map(f64::exp))
        .collect::<Result<_>>()?;
    // P(exactly C clicks) = Σ_{A⊆C} (-1)^|A| P(silent on ¬C ∪ A)
    let probs = (0..=full)
        .map(|c| {
            let quiet = full & !c;
            let mut total = 0.0;
            let mut a = c;
            loop {
                let sign = if a.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                total += sign * silence[(quiet | a) as usize];
                if a == 0 {
                    break;
                }
                a = (a - 1) & c;
            }
            total.max(0.0)
        })
        .collect();
    Ok(probs)
}
