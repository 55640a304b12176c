//! Command-line front end: `verdict`, `thresholds` and `figure3`.
//!
//! Exit status: 0 when nonclassicality is demonstrated (or a table was
//! written), 2 when it is not, 1 on any error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ExperimentConfig, OutputFormat};
use crate::detection;
use crate::error::{Error, Result};
use crate::montecarlo::{self, SimConfig};
use crate::planner::{self, Regime};
use crate::sources::{self, NoiseGeometry, Robustness};

pub const EXIT_DEMONSTRATED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_DEMONSTRATED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "photon-ensemble",
    version,
    about = "Nonclassicality tests for single-photon emitter ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the criterion for a configured experiment.
    Verdict(CommonArgs),
    /// Tabulate efficiency thresholds against thermal background.
    Thresholds(CommonArgs),
    /// Minimal measurement time against ensemble size.
    Figure3(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment description (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Seed for randomized steps; chosen automatically and reported if absent.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output file; standard output if absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Required d/σ_d.
    #[arg(long, default_value_t = planner::DEFAULT_TARGET)]
    significance: f64,
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_ERROR
            } else {
                EXIT_DEMONSTRATED
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Verdict(a) => verdict(a),
        Command::Thresholds(a) => thresholds(a).map(|_| EXIT_DEMONSTRATED),
        Command::Figure3(a) => figure3(a).map(|_| EXIT_DEMONSTRATED),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig> {
    if !(args.significance > 0.0 && args.significance.is_finite()) {
        return Err(Error::Config(format!(
            "--significance {} must be positive",
            args.significance
        )));
    }
    ExperimentConfig::load(&args.config)
}

fn sink(args: &CommonArgs, cfg: &ExperimentConfig) -> Result<(Box<dyn Write>, OutputFormat)> {
    let out = cfg.output.clone().unwrap_or_default();
    let format = args.format.or(out.format).unwrap_or_default();
    let writer: Box<dyn Write> = match args.out.clone().or(out.path) {
        Some(path) => Box::new(std::io::BufWriter::new(std::fs::File::create(path)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    Ok((writer, format))
}

fn write_records<R: Serialize>(
    mut w: Box<dyn Write>,
    format: OutputFormat,
    rows: &[R],
) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut csv = csv::WriterBuilder::new()
                .terminator(csv::Terminator::CRLF)
                .from_writer(&mut w);
            for row in rows {
                csv.serialize(row).map_err(csv_error)?;
            }
            csv.flush()?;
        }
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut w, rows).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("{other:?}")),
    }
}

#[derive(Debug, Serialize)]
struct VerdictRecord {
    verdict: &'static str,
    #[serde(rename = "M")]
    m: u32,
    transmittance: f64,
    #[serde(rename = "log_P0")]
    log_p0: f64,
    #[serde(rename = "log_P0M")]
    log_p0m: f64,
    d0: f64,
    #[serde(rename = "d0M")]
    d0m: f64,
    d: f64,
    violated: bool,
    unbounded: bool,
    significance: f64,
    seed: Option<u64>,
    mc_open_bins: Option<u64>,
    #[serde(rename = "mc_log_P0")]
    mc_log_p0: Option<f64>,
    #[serde(rename = "mc_log_P0M")]
    mc_log_p0m: Option<f64>,
    #[serde(rename = "mc_se_log10_P0M")]
    mc_se_log10_p0m: Option<f64>,
    mc_d: Option<f64>,
    mc_sigma_d: Option<f64>,
    mc_ratio: Option<f64>,
    plan_t_min_s: Option<f64>,
    #[serde(rename = "plan_T")]
    plan_t: Option<f64>,
    plan_regime: Option<Regime>,
    plan_flux: Option<f64>,
}

fn verdict(args: &CommonArgs) -> Result<i32> {
    let cfg = load(args)?;
    let t = cfg.sim.as_ref().map_or(1.0, |s| s.transmittance);
    let analytic = detection::criterion_from_network_attenuated(&cfg.network, &cfg.source, t)?;
    let mut rec = VerdictRecord {
        verdict: "not_demonstrated",
        m: analytic.m,
        transmittance: t,
        log_p0: analytic.log_p0,
        log_p0m: analytic.log_p0m,
        d0: analytic.d0,
        d0m: analytic.d0m,
        d: analytic.d,
        violated: analytic.violated,
        unbounded: analytic.unbounded,
        significance: args.significance,
        seed: None,
        mc_open_bins: None,
        mc_log_p0: None,
        mc_log_p0m: None,
        mc_se_log10_p0m: None,
        mc_d: None,
        mc_sigma_d: None,
        mc_ratio: None,
        plan_t_min_s: None,
        plan_t: None,
        plan_regime: None,
        plan_flux: None,
    };
    let mut demonstrated = analytic.violated;
    if let Some(sim) = &cfg.sim {
        let seed = args.seed.or(sim.seed).unwrap_or_else(rand::random);
        let sim_cfg = SimConfig {
            seed,
            bins: sim.bins,
            duty_cycle: sim.duty_cycle,
            spec: cfg.source.clone(),
            net: cfg.network.clone(),
            transmittance: sim.transmittance,
            partitions: sim.partitions,
        };
        let est = montecarlo::run(&sim_cfg)?;
        let sig = montecarlo::significance(&est, analytic.m)?;
        rec.seed = Some(seed);
        rec.mc_open_bins = Some(est.open_bins);
        rec.mc_log_p0 = Some(est.log_p0_hat);
        rec.mc_log_p0m = Some(est.log_p0m_hat);
        rec.mc_se_log10_p0m = Some(est.se_log10_p0m);
        rec.mc_d = Some(sig.d);
        rec.mc_sigma_d = Some(sig.sigma_d);
        rec.mc_ratio = Some(sig.ratio);
        demonstrated = demonstrated && sig.violated && sig.ratio >= args.significance;
    }
    if let Some(plan) = &cfg.plan {
        if analytic.violated || plan.transmittance.is_none() {
            let result = match plan.transmittance {
                Some(t) => {
                    planner::plan_at(&cfg.source, &cfg.network, t, args.significance, plan.gating)
                        .map(|op| (op.wall_time, t, Regime::classify(t, op.duty_cycle)))
                }
                None => planner::optimize_attenuation(
                    &cfg.source,
                    &cfg.network,
                    args.significance,
                    plan.gating,
                )
                .map(|p| (p.t_min, p.t_opt, p.regime)),
            };
            match result {
                Ok((time, t, regime)) => {
                    rec.plan_t_min_s = Some(time);
                    rec.plan_t = Some(t);
                    rec.plan_regime = Some(regime);
                    rec.plan_flux =
                        Some(crate::fock::LightSource::mean_photon_number(&cfg.source)? * t);
                }
                Err(Error::Infeasible(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if demonstrated {
        rec.verdict = "nonclassical";
    }
    let (w, format) = sink(args, &cfg)?;
    match format {
        OutputFormat::Csv => write_records(w, format, &[rec])?,
        OutputFormat::Json => {
            let mut w = w;
            serde_json::to_writer_pretty(&mut w, &rec).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(w)?;
            w.flush()?;
        }
    }
    Ok(if demonstrated {
        EXIT_DEMONSTRATED
    } else {
        EXIT_NOT_DEMONSTRATED
    })
}

#[derive(Debug, Serialize)]
struct ThresholdRecord {
    nbar: f64,
    #[serde(rename = "N")]
    n: u64,
    eta_threshold_rho1: Option<f64>,
    eta_threshold_rho2: Option<f64>,
    #[serde(rename = "T_robustness")]
    t_robustness: String,
}

fn threshold_or_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Infeasible(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn thresholds(args: &CommonArgs) -> Result<()> {
    let cfg = load(args)?;
    let sweep = cfg
        .thresholds
        .clone()
        .ok_or_else(|| Error::Config("missing [thresholds] section".into()))?;
    let mut rows = Vec::new();
    for &nbar in &sweep.nbar {
        let robustness = match sources::attenuation_robustness(cfg.source.eta1, nbar) {
            Ok(Robustness::Absolute) => "absolute".to_string(),
            Ok(Robustness::Never { .. }) => "never".to_string(),
            Ok(Robustness::MinTransmittance { t_min }) => t_min.to_string(),
            Err(Error::Domain { .. }) => "undefined".to_string(),
            Err(e) => return Err(e),
        };
        for &n in &sweep.emitters {
            rows.push(ThresholdRecord {
                nbar,
                n,
                eta_threshold_rho1: threshold_or_none(sources::numeric_noise_threshold(
                    NoiseGeometry::PerEmitter,
                    nbar,
                    n,
                ))?,
                eta_threshold_rho2: threshold_or_none(sources::numeric_noise_threshold(
                    NoiseGeometry::Common,
                    nbar,
                    n,
                ))?,
                t_robustness: robustness.clone(),
            });
        }
    }
    let (w, format) = sink(args, &cfg)?;
    write_records(w, format, &rows)
}

#[derive(Debug, Serialize)]
struct Figure3Record {
    #[serde(rename = "N")]
    n: u64,
    t_min_gated_s: f64,
    t_min_bs_only_s: f64,
    #[serde(rename = "T_opt")]
    t_opt: f64,
    flux: f64,
}

fn figure3(args: &CommonArgs) -> Result<()> {
    let cfg = load(args)?;
    let settings = cfg
        .figure3
        .clone()
        .unwrap_or(crate::config::Figure3Settings {
            eta: None,
            n_grid: None,
            n_min: None,
            n_max: None,
            points: None,
        });
    let eta = settings.eta.unwrap_or(cfg.source.eta1);
    let curve = planner::figure3_curve(eta, &cfg.network, &settings.grid(), args.significance)?;
    let rows: Vec<Figure3Record> = curve
        .into_iter()
        .map(|p| Figure3Record {
            n: p.n,
            t_min_gated_s: p.t_min_gated_s,
            t_min_bs_only_s: p.t_min_bs_only_s,
            t_opt: p.t_opt,
            flux: p.flux,
        })
        .collect();
    let (w, format) = sink(args, &cfg)?;
    write_records(w, format, &rows)
}
