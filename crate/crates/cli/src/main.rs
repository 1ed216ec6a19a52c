//! Batch front door for the mismatched-splitting solver library.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

mod commands;
mod config;
mod output;
mod problem;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{AlgorithmChoice, Overrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or problem assembly input; exit code 2.
    Config(String),
    /// Solver produced a non-finite iterate; exit code 3.
    Numerical(String),
    /// Output plumbing failure; exit code 1.
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<msplit::tomo::TomoError> for CliError {
    fn from(e: msplit::tomo::TomoError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<msplit::synthetic::SyntheticError> for CliError {
    fn from(e: msplit::synthetic::SyntheticError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "msplit",
    version,
    about = "Operator-splitting solvers for monotone inclusions with adjoint mismatch"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the problem seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the algorithm selection.
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmChoice>,
    /// Override the iteration cap.
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            algorithm: self.algorithm,
            max_iter: self.max_iter,
        }
    }

    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(&self.config, &self.overrides())
    }
}

#[derive(Args)]
struct CompareArgs {
    /// Run configurations; repeat the flag for each run.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmChoice>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the problem and write the derived-constants ledger.
    Estimate(CommonArgs),
    /// Solve and emit the metric trace (CSV) plus a summary (JSON).
    Run(CommonArgs),
    /// Execute several runs of the same problem and merge their traces.
    Compare(CompareArgs),
    /// Generate and export the phantom and its noisy sinogram.
    Phantom(CommonArgs),
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate(args) => commands::cmd_estimate(&args.load()?),
        Command::Run(args) => commands::cmd_run(&args.load()?),
        Command::Phantom(args) => commands::cmd_phantom(&args.load()?),
        Command::Compare(args) => {
            let overrides = Overrides {
                seed: args.seed,
                out: args.out.clone(),
                algorithm: args.algorithm,
                max_iter: args.max_iter,
            };
            let configs: Vec<RunConfig> = args
                .config
                .iter()
                .map(|p| RunConfig::load(p, &overrides))
                .collect::<Result<_, _>>()?;
            commands::cmd_compare(&configs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
