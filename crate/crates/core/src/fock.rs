//! Photon-number distributions and the generating-function algebra on them.
//!
//! Every state handled by the library is diagonal in the photon-number
//! basis, so a state is just a probability vector over `n = 0..=n_max`.
//! Classical generators (Poissonian, thermal and their mixtures) also keep a
//! closed form so that vacuum probabilities of those states are exact rather
//! than limited by truncation.

use crate::error::{check_non_negative, check_probability, param, Error, Result};
use crate::numeric::{ln_choose, log_sum_exp};
use statrs::function::gamma::ln_gamma;

/// Tail mass that may be discarded when a distribution is truncated.
pub const TAIL_TOLERANCE: f64 = 1e-10;

/// Hard cap on the number of tabulated photon-number terms.
pub const MAX_TERMS: usize = 1_000_000;

/// Tail actually used for closed-form tabulation. Tighter than
/// [`TAIL_TOLERANCE`] so that moments of the table match the closed form.
const TABULATION_TAIL: f64 = 1e-15;

/// Tolerance on the normalisation of caller-supplied probability vectors.
const NORMALISATION_TOLERANCE: f64 = 1e-10;

/// Closed-form photon statistics of the classical generators.
#[derive(Clone, Debug, PartialEq)]
pub enum ClosedForm {
    /// Coherent light / Poissonian noise with the given mean.
    Poisson { mean: f64 },
    /// Thermal (Bose-Einstein) light with the given mean.
    Thermal { nbar: f64 },
    /// Convex combination; weights sum to one.
    Mixture(Vec<(f64, ClosedForm)>),
}

impl ClosedForm {
    fn log_no_click(&self, s: f64) -> f64 {
        match self {
            ClosedForm::Poisson { mean } => -mean * s,
            ClosedForm::Thermal { nbar } => -(nbar * s).ln_1p(),
            ClosedForm::Mixture(parts) => {
                log_sum_exp(parts.iter().map(|(w, c)| w.ln() + c.log_no_click(s)))
            }
        }
    }

    fn attenuate(&self, t: f64) -> ClosedForm {
        match self {
            ClosedForm::Poisson { mean } => ClosedForm::Poisson { mean: mean * t },
            // binomial loss keeps a geometric law geometric
            ClosedForm::Thermal { nbar } => ClosedForm::Thermal { nbar: nbar * t },
            ClosedForm::Mixture(parts) => {
                ClosedForm::Mixture(parts.iter().map(|(w, c)| (*w, c.attenuate(t))).collect())
            }
        }
    }

    fn mean(&self) -> f64 {
        match self {
            ClosedForm::Poisson { mean } => *mean,
            ClosedForm::Thermal { nbar } => *nbar,
            ClosedForm::Mixture(parts) => parts.iter().map(|(w, c)| w * c.mean()).sum(),
        }
    }

    fn tabulate(&self) -> Result<Vec<f64>> {
        match self {
            ClosedForm::Poisson { mean } => poisson_table(*mean),
            ClosedForm::Thermal { nbar } => thermal_table(*nbar),
            ClosedForm::Mixture(parts) => {
                let tables = parts
                    .iter()
                    .map(|(w, c)| c.tabulate().map(|t| (*w, t)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(weighted_sum(&tables))
            }
        }
    }
}

fn weighted_sum(tables: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let len = tables.iter().map(|(_, t)| t.len()).max().unwrap_or(1);
    let mut out = vec![0.0; len];
    for (w, t) in tables {
        for (o, p) in out.iter_mut().zip(t) {
            *o += w * p;
        }
    }
    out
}

fn normalise(mut probs: Vec<f64>) -> Vec<f64> {
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    probs
}

pub(crate) fn thermal_table(nbar: f64) -> Result<Vec<f64>> {
    if nbar == 0.0 {
        return Ok(vec![1.0]);
    }
    let ln_q = (nbar / (1.0 + nbar)).ln();
    // P(n > K) = q^(K+1)
    let terms = (TABULATION_TAIL.ln() / ln_q).ceil() as usize + 1;
    if terms > MAX_TERMS {
        return Err(Error::Truncation {
            what: "thermal distribution",
            cap: MAX_TERMS,
        });
    }
    let ln_norm = nbar.ln_1p();
    let probs = (0..terms)
        .map(|n| (n as f64 * ln_q - ln_norm).exp())
        .collect();
    Ok(normalise(probs))
}

pub(crate) fn poisson_table(mean: f64) -> Result<Vec<f64>> {
    if mean == 0.0 {
        return Ok(vec![1.0]);
    }
    let ln_mean = mean.ln();
    let mut probs = Vec::new();
    let mut n = 0usize;
    loop {
        let ln_p = -mean + n as f64 * ln_mean - ln_gamma(n as f64 + 1.0);
        let p = ln_p.exp();
        probs.push(p);
        let next = (n + 1) as f64;
        if next > mean {
            // geometric bound on the remaining tail
            let ratio = mean / next;
            if p * ratio / (1.0 - ratio) < TABULATION_TAIL {
                break;
            }
        }
        n += 1;
        if probs.len() >= MAX_TERMS {
            return Err(Error::Truncation {
                what: "Poisson distribution",
                cap: MAX_TERMS,
            });
        }
    }
    Ok(normalise(probs))
}

/// Truncated probability vector over photon number.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonNumberDistribution {
    probs: Vec<f64>,
    closed: Option<ClosedForm>,
}

impl PhotonNumberDistribution {
    /// Builds a distribution from explicit probabilities.
    ///
    /// Entries must lie in `[0, 1]` and sum to one within `1e-10`; the vector
    /// is renormalised.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(param("probs", "empty probability vector"));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(param("probs", format!("entry {bad} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALISATION_TOLERANCE {
            return Err(param("probs", format!("entries sum to {total}, not 1")));
        }
        Ok(Self {
            probs: normalise(probs),
            closed: None,
        })
    }

    fn from_closed(closed: ClosedForm, n_max: usize) -> Result<Self> {
        let mut probs = closed.tabulate()?;
        if probs.len() <= n_max {
            if n_max + 1 > MAX_TERMS {
                return Err(Error::Truncation {
                    what: "photon-number table",
                    cap: MAX_TERMS,
                });
            }
            probs.resize(n_max + 1, 0.0);
        }
        Ok(Self {
            probs,
            closed: Some(closed),
        })
    }

    pub fn vacuum() -> Self {
        Self {
            probs: vec![1.0],
            closed: None,
        }
    }

    /// `η|1⟩⟨1| + (1-η)|0⟩⟨0|`.
    pub fn single_photon_emitter(eta: f64) -> Result<Self> {
        check_probability("eta", eta)?;
        if eta == 0.0 {
            return Ok(Self::vacuum());
        }
        Ok(Self {
            probs: vec![1.0 - eta, eta],
            closed: None,
        })
    }

    /// Emitter with a small two-photon admixture:
    /// `(1-η₁-η₂)|0⟩⟨0| + η₁|1⟩⟨1| + η₂|2⟩⟨2|`.
    pub fn imperfect_emitter(eta1: f64, eta2: f64) -> Result<Self> {
        check_probability("eta1", eta1)?;
        check_probability("eta2", eta2)?;
        if eta1 + eta2 > 1.0 {
            return Err(param(
                "eta2",
                format!("eta1 + eta2 = {} exceeds one", eta1 + eta2),
            ));
        }
        Ok(Self {
            probs: vec![1.0 - eta1 - eta2, eta1, eta2],
            closed: None,
        })
    }

    /// Thermal light with mean `nbar`. The table is grown beyond `n_max`
    /// whenever that is needed to keep the discarded tail below
    /// [`TAIL_TOLERANCE`]; passing `0` lets the cutoff be chosen entirely
    /// automatically.
    pub fn thermal(nbar: f64, n_max: usize) -> Result<Self> {
        check_non_negative("nbar", nbar)?;
        Self::from_closed(ClosedForm::Thermal { nbar }, n_max)
    }

    /// Poissonian photon statistics (coherent light) with the given mean.
    pub fn poissonian(mean: f64, n_max: usize) -> Result<Self> {
        check_non_negative("mean", mean)?;
        Self::from_closed(ClosedForm::Poisson { mean }, n_max)
    }

    /// Alias for [`Self::poissonian`].
    pub fn coherent(mean: f64) -> Result<Self> {
        Self::poissonian(mean, 0)
    }

    /// Convex combination of distributions. The closed form survives when
    /// every component has one.
    pub fn mixture(components: &[(f64, PhotonNumberDistribution)]) -> Result<Self> {
        if components.is_empty() {
            return Err(param("components", "empty mixture"));
        }
        let total: f64 = components.iter().map(|(w, _)| *w).sum();
        if components.iter().any(|(w, _)| !(*w >= 0.0)) {
            return Err(param("weights", "negative mixture weight"));
        }
        if (total - 1.0).abs() > NORMALISATION_TOLERANCE {
            return Err(param("weights", format!("weights sum to {total}, not 1")));
        }
        let tables: Vec<(f64, Vec<f64>)> = components
            .iter()
            .map(|(w, d)| (w / total, d.probs.clone()))
            .collect();
        let closed = components
            .iter()
            .map(|(w, d)| d.closed.clone().map(|c| (w / total, c)))
            .collect::<Option<Vec<_>>>()
            .map(ClosedForm::Mixture);
        Ok(Self {
            probs: normalise(weighted_sum(&tables)),
            closed,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn closed_form(&self) -> Option<&ClosedForm> {
        self.closed.as_ref()
    }

    /// True for the classical generators (Poissonian, thermal, their
    /// mixtures).
    pub fn is_declared_classical(&self) -> bool {
        self.closed.is_some()
    }

    pub fn mean(&self) -> f64 {
        if let Some(c) = &self.closed {
            return c.mean();
        }
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| (n as f64 - mean).powi(2) * p)
            .sum()
    }

    /// Binomial loss channel with transmittance `t`.
    pub fn attenuate(&self, t: f64) -> Result<Self> {
        check_probability("T", t)?;
        if t == 1.0 {
            return Ok(self.clone());
        }
        if let Some(closed) = &self.closed {
            return Self::from_closed(closed.attenuate(t), 0);
        }
        if t == 0.0 {
            return Ok(Self::vacuum());
        }
        let n_max = self.n_max() as u64;
        let (ln_t, ln_r) = (t.ln(), (-t).ln_1p());
        let mut out = vec![0.0; self.probs.len()];
        for (n, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let n = n as u64;
            for k in 0..=n {
                let ln_w = ln_choose(n, k) + k as f64 * ln_t + (n - k) as f64 * ln_r;
                out[k as usize] += p * ln_w.exp();
            }
        }
        debug_assert!(out.len() as u64 == n_max + 1);
        Ok(Self {
            probs: normalise(out),
            closed: None,
        })
    }

    /// Generating function `E[xⁿ] = Σ pₙ xⁿ` for `x ∈ [0, 1]`.
    pub fn pgf(&self, x: f64) -> f64 {
        if let Some(closed) = &self.closed {
            return closed.log_no_click(1.0 - x).exp().clamp(0.0, 1.0);
        }
        // Horner from the highest power down
        self.probs
            .iter()
            .rev()
            .fold(0.0, |acc, p| acc * x + p)
            .clamp(0.0, 1.0)
    }

    /// `ln E[(1-s)ⁿ]`: log-probability that no photon is registered when each
    /// photon is independently detected with efficiency `s`.
    ///
    /// Evaluated through `ln(1 - Σ pₙ (1 - (1-s)ⁿ))` with `log1p`/`expm1`, so
    /// tiny deficits survive being multiplied by large emitter counts.
    pub fn log_no_click(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        if let Some(closed) = &self.closed {
            return closed.log_no_click(s).min(0.0);
        }
        if s == 1.0 {
            return self.probs[0].ln();
        }
        let ln_keep = (-s).ln_1p();
        let deficit: f64 = self
            .probs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, p)| p * -(n as f64 * ln_keep).exp_m1())
            .sum();
        if deficit < 0.5 {
            (-deficit).ln_1p()
        } else {
            self.pgf(1.0 - s).ln()
        }
    }

    /// Distribution of the total photon number of two independent modes.
    ///
    /// Quadratic in the table sizes; production code never convolves and
    /// relies on the generating-function factorisation instead.
    pub fn convolve(&self, other: &Self) -> Self {
        let mut out = vec![0.0; self.probs.len() + other.probs.len() - 1];
        for (i, a) in self.probs.iter().enumerate() {
            for (j, b) in other.probs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self {
            probs: normalise(out),
            closed: None,
        }
    }
}

/// Anything that can report the probability of registering no photon when
/// each photon is detected independently with a given efficiency.
pub trait LightSource {
    /// Natural log of the no-click probability at total efficiency `s`.
    fn log_no_click(&self, s: f64) -> Result<f64>;

    /// Mean photon number per time bin before detection.
    fn mean_photon_number(&self) -> Result<f64>;
}

impl LightSource for PhotonNumberDistribution {
    fn log_no_click(&self, s: f64) -> Result<f64> {
        check_probability("s", s)?;
        Ok(PhotonNumberDistribution::log_no_click(self, s))
    }

    fn mean_photon_number(&self) -> Result<f64> {
        Ok(self.mean())
    }
}

/// Independent modes; the vacuum probability of the whole is the product of
/// the parts'.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourceComposition {
    parts: Vec<(PhotonNumberDistribution, u64)>,
}

impl SourceComposition {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one independent mode.
    pub fn with(mut self, dist: PhotonNumberDistribution) -> Self {
        self.push(dist, 1);
        self
    }

    /// Adds `copies` independent, identically distributed modes.
    pub fn with_copies(mut self, dist: PhotonNumberDistribution, copies: u64) -> Self {
        self.push(dist, copies);
        self
    }

    pub fn push(&mut self, dist: PhotonNumberDistribution, copies: u64) {
        if copies > 0 {
            self.parts.push((dist, copies));
        }
    }

    pub fn parts(&self) -> &[(PhotonNumberDistribution, u64)] {
        &self.parts
    }

    pub fn mode_count(&self) -> u64 {
        self.parts.iter().map(|(_, c)| c).sum()
    }

    pub fn is_declared_classical(&self) -> bool {
        self.parts.iter().all(|(d, _)| d.is_declared_classical())
    }

    /// `Σ_parts ln E[(1-s)ⁿ]`, exact for independent modes.
    pub fn no_click_prob(&self, s: f64) -> f64 {
        self.parts
            .iter()
            .map(|(d, copies)| {
                let v = d.log_no_click(s);
                if v == 0.0 {
                    0.0
                } else {
                    *copies as f64 * v
                }
            })
            .sum()
    }

    /// Explicit distribution of the total photon number. Test-oracle scale
    /// only.
    pub fn convolved(&self) -> PhotonNumberDistribution {
        let mut acc = PhotonNumberDistribution::vacuum();
        for (d, copies) in &self.parts {
            for _ in 0..*copies {
                acc = acc.convolve(d);
            }
        }
        acc
    }
}

impl LightSource for SourceComposition {
    fn log_no_click(&self, s: f64) -> Result<f64> {
        check_probability("s", s)?;
        Ok(self.no_click_prob(s))
    }

    fn mean_photon_number(&self) -> Result<f64> {
        Ok(self.parts.iter().map(|(d, c)| *c as f64 * d.mean()).sum())
    }
}

/// Free-function form of [`PhotonNumberDistribution::pgf`].
pub fn pgf(dist: &PhotonNumberDistribution, x: f64) -> f64 {
    dist.pgf(x)
}

/// Free-function form of [`PhotonNumberDistribution::attenuate`].
pub fn attenuate(dist: &PhotonNumberDistribution, t: f64) -> Result<PhotonNumberDistribution> {
    dist.attenuate(t)
}

/// Validates an efficiency-like argument and forwards to
/// [`SourceComposition::no_click_prob`].
pub fn no_click_prob(comp: &SourceComposition, s: f64) -> Result<f64> {
    check_probability("s", s)?;
    Ok(comp.no_click_prob(s))
}
