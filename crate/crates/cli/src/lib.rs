//! Command-line front end: scenario files in, CSV and reports out.
//!
//! Exit codes: 0 ok, 1 usage or I/O, 2 invalid scenario, 3 divergence,
//! 4 audit failure.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod bundled;
pub mod commands;
pub mod config;
pub mod metadata;
pub mod trajectory;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heatfreq_core::analysis::{DEFAULT_BAND, DEFAULT_HOLD};
use heatfreq_core::equilibrium::EquilibriumError;
use heatfreq_core::solver::SolverError;
use thiserror::Error;

pub use config::{load_config, parse_config, ConfigError, Scenario, ScenarioConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Equilibrium(#[from] EquilibriumError),
    #[error("simulation diverged at t = {t}")]
    Divergence { t: f64 },
    #[error("{0}")]
    Solver(SolverError),
    #[error("{0}")]
    Table(#[from] analyze::TableError),
    #[error("audit failed: {0}")]
    Audit(String),
    #[error("{failed} of {total} scenarios failed")]
    Batch { failed: usize, total: usize, code: u8 },
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Divergence { t } => CliError::Divergence { t },
            SolverError::InvalidParams(m) => CliError::Config(ConfigError::Params(m)),
            other => CliError::Solver(other),
        }
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Table(_) => 1,
            CliError::Config(ConfigError::Io { .. }) => 1,
            CliError::Config(_) | CliError::Equilibrium(_) => 2,
            CliError::Divergence { .. } | CliError::Solver(_) => 3,
            CliError::Audit(_) => 4,
            CliError::Batch { code, .. } => *code,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "heatfreq", version, about = "Coupled power/district-heating frequency simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command that loads a scenario.
#[derive(Debug, Clone, Default, Args)]
pub struct LoadArgs {
    /// Accept parameter violations (e.g. negative damping); structural errors still fail.
    #[arg(long)]
    pub force: bool,
    /// Retune Mode-1 pump gains so the final frequency deviation equals this value.
    #[arg(long, value_name = "OMEGA", allow_hyphen_values = true)]
    pub match_omega: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario and print its validation report.
    Validate { config: PathBuf },
    /// Integrate a scenario; writes trajectory.csv and metadata.txt.
    Simulate {
        /// Scenario JSON, or a metadata.txt from an earlier run.
        config: PathBuf,
        /// Output directory; defaults to the config's outputs.directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        load: LoadArgs,
    },
    /// Closed-form equilibrium, multipliers and dispatch cross-check.
    Equilibrium {
        config: PathBuf,
        /// Use the loads in effect at this time instead of the final ones.
        #[arg(long)]
        at: Option<f64>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        load: LoadArgs,
    },
    /// Simulate and check that the storage functions never increase.
    Audit {
        config: PathBuf,
        /// Relative tolerance of the monotonicity check.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Audit every inter-disturbance window, not just the last one.
        #[arg(long)]
        segments: bool,
        #[command(flatten)]
        load: LoadArgs,
    },
    /// Settling times, peaks and sharing ratios of a trajectory CSV.
    Analyze {
        csv: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BAND)]
        band: f64,
        #[arg(long, default_value_t = DEFAULT_HOLD)]
        hold: f64,
        /// Start of the settling window; defaults to the last disturbance recorded in metadata.txt.
        #[arg(long)]
        after: Option<f64>,
        /// Scenario for cost-implied ratios; defaults to the one in metadata.txt.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Simulate every *.json scenario in a directory concurrently.
    Batch {
        dir: PathBuf,
        /// Root for per-scenario output directories; defaults to <dir>/results.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print a bundled scenario, or list them.
    Fixture { name: Option<String> },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
