//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::DetectorNetwork;
use crate::error::{Error, Result};
use crate::montecarlo::DEFAULT_PARTITIONS;
use crate::planner::Gating;
use crate::sources::SourceSpec;

pub const SCHEMA_VERSION: u32 = 1;

fn default_partitions() -> u64 {
    DEFAULT_PARTITIONS
}
fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub source: SourceSpec,
    pub network: DetectorNetwork,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure3: Option<Figure3Settings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSettings>,
}

/// Monte Carlo run requested by a verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub bins: u64,
    #[serde(default = "default_one")]
    pub duty_cycle: f64,
    #[serde(default = "default_one")]
    pub transmittance: f64,
    #[serde(default = "default_partitions")]
    pub partitions: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Measurement-time planning requested by a verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSettings {
    #[serde(default = "default_gating")]
    pub gating: Gating,
    /// Evaluate at this transmittance instead of optimising it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transmittance: Option<f64>,
}

fn default_gating() -> Gating {
    Gating::Allowed
}

/// Grid of background levels and ensemble sizes for the threshold table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSweep {
    pub nbar: Vec<f64>,
    pub emitters: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure3Settings {
    /// Emitter efficiency; defaults to the source's `eta1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Explicit ascending grid of ensemble sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_min: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

impl Figure3Settings {
    pub fn grid(&self) -> Vec<u64> {
        match &self.n_grid {
            Some(g) => g.clone(),
            None => crate::planner::log_grid(
                self.n_min.unwrap_or(1),
                self.n_max.unwrap_or(10_000),
                self.points.unwrap_or(41),
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

impl ExperimentConfig {
    /// Parses and validates a configuration. Syntax and schema errors carry
    /// the line and column of the offending item.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.source.validate()?;
        self.network.validate()?;
        if let Some(sim) = &self.sim {
            let cfg = crate::montecarlo::SimConfig {
                seed: 0,
                bins: sim.bins,
                duty_cycle: sim.duty_cycle,
                spec: self.source.clone(),
                net: self.network.clone(),
                transmittance: sim.transmittance,
                partitions: sim.partitions,
            };
            cfg.validate()?;
        }
        if let Some(t) = self.plan.as_ref().and_then(|p| p.transmittance) {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!(
                    "plan.transmittance {t} is not in (0, 1]"
                )));
            }
        }
        if let Some(sweep) = &self.thresholds {
            if sweep.nbar.iter().any(|n| !(*n >= 0.0 && n.is_finite())) {
                return Err(Error::Config(
                    "thresholds.nbar must be finite and non-negative".into(),
                ));
            }
            if sweep.emitters.contains(&0) {
                return Err(Error::Config("thresholds.emitters must be positive".into()));
            }
        }
        if let Some(f) = &self.figure3 {
            if let Some(eta) = f.eta {
                if !(eta > 0.0 && eta <= 1.0) {
                    return Err(Error::Config(format!("figure3.eta {eta} is not in (0, 1]")));
                }
            }
            let grid = f.grid();
            if grid.is_empty() || grid.contains(&0) || grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(
                    "figure3 grid must be non-empty, positive and strictly ascending".into(),
                ));
            }
        }
        Ok(())
    }
}
