//! Experiment front end: TOML configuration, CSV ingestion and the four
//! scenario runners. Each run writes `report.json`, `trace.csv` and
//! `meta.json` into the output directory.

pub mod config;
pub mod experiments;
pub mod ingest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

pub use config::{DatasetSource, ExperimentConfig, Overrides, ResolvedConfig, Scenario, TaskKind};
pub use ingest::{ingest_csv, Ingested};

use crate::error::Error;
use experiments::TraceRow;

/// Environment variable capping the number of seeds run in parallel.
pub const THREADS_ENV: &str = "SHIFTLAB_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 1 for usage and configuration errors, 2 for everything that fails
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Serialize)]
struct Report<'a, S: Serialize, A: Serialize> {
    scenario: &'static str,
    config: &'a ExperimentConfig,
    per_seed: Vec<S>,
    aggregate: A,
}

#[derive(Debug, Serialize)]
struct DatasetMeta {
    rows: usize,
    features: usize,
    dropped_rows: usize,
    feature_names: Vec<String>,
    label_map: Option<Vec<String>>,
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    name: &'static str,
    version: &'static str,
    scenario: &'static str,
    seeds: &'a [u64],
    config: &'a ExperimentConfig,
    dataset: Option<DatasetMeta>,
}

/// Paths of the files written by [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: PathBuf,
    pub trace: PathBuf,
    pub meta: PathBuf,
}

fn thread_count() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))),
        },
    }
}

/// Runs `job` for every seed on a pool sized by [`THREADS_ENV`] and returns
/// the results in seed-list order.
fn per_seed<T, F>(seeds: &[u64], job: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(u64) -> crate::Result<T> + Sync,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Io(e.to_string()))?;
    let results: Vec<crate::Result<T>> = pool.install(|| seeds.par_iter().map(|&s| job(s)).collect());
    results.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_trace(path: &Path, header: &[String], rows: &[TraceRow]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut writer = csv::Writer::from_path(path).map_err(io)?;
    writer.write_record(header).map_err(io)?;
    for row in rows {
        writer.write_record(row).map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_dataset(cfg: &ResolvedConfig) -> Result<Option<Ingested>, CliError> {
    let kind = match cfg.scenario {
        Scenario::Jdot => TaskKind::Regression,
        _ => TaskKind::Classification,
    };
    match cfg.dataset() {
        DatasetSource::Synthetic => Ok(None),
        DatasetSource::Csv { path, label_column } => ingest_csv(path, label_column, kind).map(Some),
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

/// Runs the configured experiment and writes its three output files into
/// `out_dir`, creating it if needed.
pub fn run_experiment(cfg: &ResolvedConfig, out_dir: &Path) -> Result<RunOutput, CliError> {
    let ingested = load_dataset(cfg)?;
    if let Some(ing) = &ingested {
        if ing.dropped_rows > 0 {
            eprintln!("warning: dropped {} rows with missing values", ing.dropped_rows);
        }
    }
    let data = ingested.as_ref().map(|i| &i.data);
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let out = RunOutput {
        report: out_dir.join("report.json"),
        trace: out_dir.join("trace.csv"),
        meta: out_dir.join("meta.json"),
    };
    let seeds = cfg.seeds();
    let scenario = cfg.scenario.name();
    let config = cfg.config();

    match cfg.scenario {
        Scenario::PriorShift => {
            let params = cfg.prior_shift();
            let results = per_seed(seeds, |s| experiments::prior_shift_seed(params, data, s))?;
            let (records, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
            let aggregate = experiments::PriorShiftSummary::average(records.iter().map(|r| &r.mean));
            let classes = params.target_priors.len();
            write_trace(
                &out.trace,
                &experiments::prior_shift_trace_header(classes),
                &traces.concat(),
            )?;
            write_json(
                &out.report,
                &Report {
                    scenario,
                    config,
                    per_seed: records,
                    aggregate,
                },
            )?;
        }
        Scenario::CovariateShift => {
            let params = cfg.covariate_shift();
            let results = per_seed(seeds, |s| experiments::covariate_seed(params, data, s))?;
            let (records, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
            let aggregate = experiments::aggregate_covariate(&records);
            write_trace(
                &out.trace,
                &header(&experiments::COVARIATE_TRACE_HEADER),
                &traces.concat(),
            )?;
            write_json(
                &out.report,
                &Report {
                    scenario,
                    config,
                    per_seed: records,
                    aggregate,
                },
            )?;
        }
        Scenario::Jdot => {
            let params = cfg.jdot();
            let results = per_seed(seeds, |s| experiments::jdot_seed(params, data, s))?;
            let (records, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
            let aggregate = experiments::aggregate_jdot(&records);
            write_trace(&out.trace, &header(&experiments::JDOT_TRACE_HEADER), &traces.concat())?;
            write_json(
                &out.report,
                &Report {
                    scenario,
                    config,
                    per_seed: records,
                    aggregate,
                },
            )?;
        }
        Scenario::Drift => {
            let params = cfg.drift();
            let records = per_seed(seeds, |s| experiments::drift_seed(params, s))?;
            let aggregate = experiments::aggregate_drift(params, &records);
            write_trace(
                &out.trace,
                &header(&experiments::DRIFT_TRACE_HEADER),
                &experiments::drift_trace(&aggregate),
            )?;
            write_json(
                &out.report,
                &Report {
                    scenario,
                    config,
                    per_seed: records,
                    aggregate,
                },
            )?;
        }
    }

    let meta = Meta {
        name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        scenario,
        seeds,
        config,
        dataset: ingested.map(|i| DatasetMeta {
            rows: i.data.len(),
            features: i.data.dim(),
            dropped_rows: i.dropped_rows,
            feature_names: i.feature_names,
            label_map: i.label_map,
        }),
    };
    write_json(&out.meta, &meta)?;
    Ok(out)
}

#[derive(Debug, Parser)]
#[command(name = "shiftlab", version, about = "Dataset-shift correction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write report.json, trace.csv and meta.json.
    Run {
        /// Scenario to run; overrides the config file.
        #[arg(long, value_enum)]
        scenario: Option<Scenario>,
        /// TOML experiment file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "shiftlab-out")]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<RunOutput, CliError> {
    match cli.command {
        Command::Run {
            scenario,
            config,
            seed,
            out,
        } => {
            let file = match &config {
                Some(path) => ExperimentConfig::load(path)?,
                None => ExperimentConfig::default(),
            };
            let resolved = file.resolve(&Overrides { scenario, seed })?;
            run_experiment(&resolved, &out)
        }
    }
}

/// Parses `args` (program name first), runs, and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(out) => {
            println!("wrote {}", out.report.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
