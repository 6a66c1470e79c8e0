//! `observer-pi`: reproduction experiments for data-driven observer
//! correction policies.
//!
//! Exit codes: 0 success, 2 input or solver error, 3 acceptance failure,
//! 4 numerical divergence.

mod commands;
mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{Experiment, Setup};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("acceptance failed: {0}")]
    Acceptance(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Acceptance(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "observer-pi", version, about = "Policy iteration for data-driven observer correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config (JSON, "v": 1).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (default: number of cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the discounted Riccati equation and print P and H*.
    Riccati(Common),
    /// Policy iteration on the linear pendulum.
    LinearPi(Common),
    /// Policy iteration on the nonlinear pendulum against the closed-form policy.
    PendulumPi(Common),
    /// Simulate two stored policies side by side.
    Compare(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (experiment, common) = match cli.command {
        Command::Riccati(c) => (Experiment::Riccati, c),
        Command::LinearPi(c) => (Experiment::LinearPi, c),
        Command::PendulumPi(c) => (Experiment::PendulumPi, c),
        Command::Compare(c) => (Experiment::Compare, c),
    };
    let setup = Setup::load(&common.config, experiment, common.out, common.seeds)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    log::info!("{} -> {}", experiment.name(), setup.out.display());
    pool.install(|| match experiment {
        Experiment::Riccati => commands::riccati(&setup),
        Experiment::LinearPi => commands::linear_pi(&setup),
        Experiment::PendulumPi => commands::pendulum_pi(&setup),
        Experiment::Compare => commands::compare(&setup),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OBSERVER_PI_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
