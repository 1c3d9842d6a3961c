//! `msfv`: batch frontend over the solver workspace. Exit codes: 0 on
//! success, 2 for configuration or input problems, 3 for numerical
//! failures during a run.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use msfv_core::error::CoreError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError::Numerical(msg.into())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ref,
    Msfv,
    Hybrid,
}

#[derive(Parser)]
#[command(name = "msfv", version, about = "Multiscale pressure solver with a learned basis predictor")]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, default_value = "msfv.toml")]
    config: PathBuf,

    /// Cap on worker threads for realization-parallel commands.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample permeability fields and write them as field files.
    GrfGen {
        /// How many realizations (defaults to the campaign ensemble size).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Run the multiscale solver on the training realizations and collect
    /// (patch, basis) pairs into a dataset file.
    Harvest,
    /// Fit the basis predictor on a harvested dataset.
    Train {
        /// Dataset path (defaults to <out>/dataset.bin).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Random-search hyperparameters on a harvested dataset.
    Tune {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Solve the pressure problem for one realization.
    Run {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value_t = 0)]
        realization: usize,
        /// Trained model (hybrid only; defaults to <out>/model.bin).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Advect a tracer through one realization's flux field.
    Transport {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value_t = 0)]
        realization: usize,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also store the concentration snapshots in a binary container.
        #[arg(long)]
        snapshots: bool,
    },
    /// Full Monte Carlo campaign: errors, quantities of interest,
    /// summaries and histograms.
    UqReport {
        /// Reuse a trained model instead of training inside the campaign.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Time basis generation: direct local solves vs the predictor.
    BenchBasis {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::GrfGen { count } => commands::grf_gen(&cli.config, *count),
        Command::Harvest => commands::harvest(&cli.config),
        Command::Train { dataset } => commands::train(&cli.config, dataset.as_deref()),
        Command::Tune { dataset } => commands::tune(&cli.config, dataset.as_deref()),
        Command::Run { method, realization, model } => {
            commands::run(&cli.config, *method, *realization, model.as_deref())
        }
        Command::Transport { method, realization, model, snapshots } => {
            commands::transport(&cli.config, *method, *realization, model.as_deref(), *snapshots)
        }
        Command::UqReport { model } => commands::uq_report(&cli.config, model.as_deref()),
        Command::BenchBasis { count, model } => {
            commands::bench_basis(&cli.config, *count, model.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
