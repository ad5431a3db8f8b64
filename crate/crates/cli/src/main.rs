//! Batch-oriented command-line front end: dataset generation, training,
//! evaluation, the encoding ablation and the bottleneck diagnostics.

mod commands;
mod config;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scatterfield::Error;

#[derive(Parser)]
#[command(name = "scatterfield", version, about = "Set-to-set forecasting on irregularly sampled spatial data")]
struct Cli {
    /// Run seed (generation, init, shuffling).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Configuration file (`key = value` lines with [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set train.lr=1e-3 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/val splits plus manifest).
    Generate {
        #[command(subcommand)]
        kind: commands::generate::GenerateCmd,
    },
    /// Train one model on a generated dataset.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint against a dataset split.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Train each model under both encoding schemes and report error ratios.
    AblateEncoding(commands::ablate::AblateArgs),
    /// Bottleneck diagnostics: retrieval grid, attribution, correction.
    Diagnose {
        #[command(subcommand)]
        experiment: commands::diagnose::DiagnoseCmd,
    },
}

/// Exit codes: 0 ok, 2 config error, 3 numeric abort, 4 IO error.
fn exit_code_for(err: &CliError) -> u8 {
    match err {
        CliError::Config(_) => 2,
        CliError::Core(e) => match e {
            Error::NumericAbort { .. }
            | Error::NonFiniteGradient { .. }
            | Error::PoissonNoConvergence { .. } => 3,
            Error::Io(_) | Error::MalformedLine { .. } => 4,
            Error::Config(_) => 2,
            _ => 1,
        },
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<String> for CliError {
    fn from(m: String) -> Self {
        CliError::Config(m)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Global flags bundled for command handlers.
pub struct Ctx {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub config: config::Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match config::Config::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => config::Config::new(),
    };
    for assignment in &cli.sets {
        if let Err(e) = cfg.set(assignment) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(0),
        out: cli.out,
        force: cli.force,
        config: cfg,
    };
    let result = match cli.cmd {
        Command::Generate { kind } => commands::generate::run(&ctx, kind),
        Command::Train(args) => commands::train::run(&ctx, args),
        Command::Evaluate(args) => commands::evaluate::run(&ctx, args),
        Command::AblateEncoding(args) => commands::ablate::run(&ctx, args),
        Command::Diagnose { experiment } => commands::diagnose::run(&ctx, experiment),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
