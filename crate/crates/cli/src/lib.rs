//! Command-line workflows for gridtune: simulation, steady states,
//! behavioral distance, tuning and system/specification comparison.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gridtune::netdyn::NetError;
use gridtune::odesolve::SolveError;
use gridtune::powerlib::PowerError;
use gridtune::probetune::TuneError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("integration failed: {0}")]
    Integration(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io { path: path.to_owned(), source }
    }

    /// 1 for configuration and file problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Integration(_) => 2,
        }
    }
}

impl From<TuneError> for CliError {
    fn from(e: TuneError) -> Self {
        match e {
            TuneError::InvalidProblem(_) | TuneError::DimensionMismatch { .. } | TuneError::Net(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Integration(e.to_string()),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        CliError::Integration(e.to_string())
    }
}

impl From<PowerError> for CliError {
    fn from(e: PowerError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `scenarios.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-scenario work.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Scenario index (0-based) used by simulate and compare.
    #[arg(long)]
    pub scenario: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate networks after a load step; writes CSV and an SVG plot.
    Simulate(Common),
    /// Compute pre-disturbance operating points.
    SteadyState(Common),
    /// Behavioral distance between system and specification.
    Distance(Common),
    /// Jointly tune system gains and specification copies.
    Tune(Common),
    /// Overlay system and specification frequencies for one scenario.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Tuned parameter file written by `tune`.
        #[arg(long)]
        tuned: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Parser)]
#[command(name = "gridtune", version, about = "Behavioral tuning of power-system frequency dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate(c) | Command::SteadyState(c) | Command::Distance(c) | Command::Tune(c) => c,
            Command::Compare { common, .. } => common,
        }
    }
}

/// Runs one command on a rayon pool sized by `--threads`.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let ctx = commands::Context::load(common)?;
    let work = || match &cli.command {
        Command::Simulate(_) => commands::simulate(&ctx),
        Command::SteadyState(_) => commands::steady_state(&ctx),
        Command::Distance(_) => commands::distance(&ctx),
        Command::Tune(_) => commands::tune(&ctx),
        Command::Compare { tuned, .. } => commands::compare(&ctx, tuned.as_deref()),
    };
    match common.threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?
            .install(work),
        None => work(),
    }
}
