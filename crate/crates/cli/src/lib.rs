//! `cellnet` command-line front end.
//!
//! Every subcommand writes one directory: `manifest.json` (written first),
//! CSV and JSON outputs, and `outputs.json` with their digests. Exit codes
//! are 0 on success, 1 when the config or inputs fail validation, and 2 on
//! runtime failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::{Loaded, RunConfig};
pub use manifest::{OutputIndex, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<cellnet_core::Error> for CliError {
    fn from(e: cellnet_core::Error) -> Self {
        use cellnet_core::Error as E;
        match e {
            E::InvalidArgument(_)
            | E::InvalidSpec(_)
            | E::DimensionMismatch { .. }
            | E::Unknown { .. }
            | E::TomlDe(_)
            | E::NoFeasibleSubset { .. }
            | E::NeedsDiscreteLaw { .. }
            | E::StageOutOfRange { .. }
            | E::IndexOutOfRange { .. }
            | E::OverlappingPartition(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cellnet", version, about = "Multi-route infinite-server network models: analysis, simulation and WLAN trace fitting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-stage and per-cell stationary means and Poisson pmf tables.
    Analyze(AnalyzeArgs),
    /// Simulate occupancy snapshots and compare cell means with the model.
    Simulate(SimulateArgs),
    /// Entropy and KL comparison of an empirical joint against the model.
    Compare(CompareArgs),
    /// Run the poll-trace pipeline and fit the model to it.
    Trace(TraceArgs),
    /// Generate a synthetic poll trace with known ground truth.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimFlags {
    #[arg(long)]
    pub replications: Option<usize>,
    /// Simulated time span, seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Time before the first snapshot, seconds.
    #[arg(long)]
    pub warmup: Option<f64>,
    /// Snapshot spacing, seconds.
    #[arg(long)]
    pub interval: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct StudyFlags {
    /// Subset sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub subset_size: Vec<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Pairwise distance limit for subsets, meters.
    #[arg(long)]
    pub distance_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TestFlags {
    /// 1: drop sessions starting at invalid APs; 2: drop invalid APs as
    /// dimensions; 3: keep everything.
    #[arg(long)]
    pub exclude_mode: Option<u8>,
    /// Also drop one-stage sessions.
    #[arg(long)]
    pub exclude_one_stage: bool,
    #[arg(long)]
    pub threshold_eta: Option<f64>,
    #[arg(long)]
    pub threshold_theta: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Snapshot CSV written by `simulate`.
    #[arg(long, conflicts_with = "polls")]
    pub snapshots: Option<PathBuf>,
    /// Poll trace (CSV or CSV.gz) to compare instead of snapshots.
    #[arg(long)]
    pub polls: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimFlags,
    #[command(flatten)]
    pub study: StudyFlags,
    #[command(flatten)]
    pub tests: TestFlags,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Poll trace, CSV or CSV.gz.
    #[arg(long)]
    pub polls: Option<PathBuf>,
    /// Arrival-test interval, seconds.
    #[arg(long)]
    pub interval: Option<f64>,
    #[command(flatten)]
    pub study: StudyFlags,
    #[command(flatten)]
    pub tests: TestFlags,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `csv` or `csv.gz`.
    #[arg(long, default_value = "csv")]
    pub format: String,
}

/// Parses `args` (program name first) and runs the subcommand; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
