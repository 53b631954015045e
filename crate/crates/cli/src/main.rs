//! `hymlab`: configuration driven experiments on discretized Hermitian surfaces.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] hymlab::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(_) => "numerics",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hymlab", version, about = "Hermitian-Yang-Mills experiments on discretized Hermitian surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// experiment configuration (TOML)
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// output directory, overriding `output.dir`
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// cap on worker threads
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// turn metric warnings into errors
    #[arg(long)]
    pub strict: bool,
    /// seed of the random initial metric, overriding `metric.seed`
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gauduchon and Kähler residuals of the configured metric
    CheckGeometry(Common),
    /// Chern numbers, Bogomolov quantity and the energy identity
    Chern(Common),
    /// Hermitian-Yang-Mills flow with trace and checkpoints
    Flow {
        #[command(flatten)]
        common: Common,
        /// continue from a checkpoint instead of the configured metric
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Solve the perturbed Hermitian-Einstein equation at one `ε`
    Perturbed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Perturbed solves followed by flows along the `ε` schedule
    ApproxFlat(Common),
    /// Segre push-forward checks on the projectivized bundle
    Segre(Common),
    /// Nef residuals of a line bundle, and its harmonic metric in degree 0
    NefCert {
        #[command(flatten)]
        common: Common,
        /// `ε` values, overriding `nef.eps`
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::from(e.exit_code())
        }
    }
}
