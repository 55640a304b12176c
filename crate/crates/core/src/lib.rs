//! Nonclassicality tests for ensembles of single-photon emitters.
//!
//! The library evaluates a click-statistics criterion that certifies
//! nonclassical light from the vacuum probabilities measured behind a
//! multi-arm beam splitter, models realistic emitter ensembles with noise,
//! decay and number fluctuations, simulates the detector network, and plans
//! how long an experiment has to run to reach a target significance.

// `!(x >= 0.0)` is deliberate throughout: NaN must fail the range checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod criteria;
pub mod detection;
pub mod error;
pub mod fock;
pub mod montecarlo;
pub mod numeric;
pub mod planner;
pub mod rng;
pub mod sources;

pub use criteria::{evaluate, CriterionResult};
pub use error::{Error, Result};
pub use fock::{LightSource, PhotonNumberDistribution, SourceComposition};
pub use sources::SourceSpec;
