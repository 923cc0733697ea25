//! `lcdes`: generate cohorts, train the pipeline, evaluate, explain and
//! compare. Exit codes: 0 ok, 1 runtime failure, 2 configuration, 3 missing
//! or corrupt artifact, 4 unknown record id.

mod artifacts;
mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcdes::pipeline::PipelineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {}", .0.display())]
    Missing(PathBuf),
    #[error("integrity check failed for {}: expected sha256 {expected}, found {found}", path.display())]
    Integrity { path: PathBuf, expected: String, found: String },
    #[error("corrupt artifact {path}: {msg}", path = .0.display(), msg = .1)]
    Corrupt(PathBuf, String),
    #[error("unknown record id {0:?}")]
    BadId(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Pipeline(PipelineError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Pipeline(PipelineError::Config(_)) => 2,
            CliError::Missing(_) | CliError::Integrity { .. } | CliError::Corrupt(..) => 3,
            CliError::BadId(_) | CliError::Pipeline(PipelineError::UnknownId(_)) => 4,
            _ => 1,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::UnknownId(id) => CliError::BadId(id),
            PipelineError::Config(m) => CliError::Config(m),
            other => CliError::Pipeline(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lcdes", version, about = "Lung-cancer risk pipeline with dynamic ensemble selection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration (TOML). Defaults apply to every missing field.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort CSV and the generator parameters used.
    Generate {
        /// Number of records.
        #[arg(long)]
        n: Option<usize>,
        /// Generator parameters (JSON).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Cross-validate the pipeline and persist every fold's artifacts.
    Train {
        /// Comma-separated model kinds, e.g. `logistic,linear_svm`.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Cohort CSV to train on instead of generating one.
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Score the trained artifacts and write the evaluation report.
    Evaluate {
        /// Add holdout metrics from the fold-averaged models.
        #[arg(long)]
        holdout: bool,
        /// Reader votes CSV covering the holdout records.
        #[arg(long)]
        votes: Option<PathBuf>,
    },
    /// Shapley summary of the final model and force plots per record.
    Explain {
        /// Comma-separated record ids to explain individually.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        /// Retrain on shrinking feature sets ranked by the summary.
        #[arg(long)]
        ablation: bool,
    },
    /// Holdout comparison of all models, optionally against reader votes.
    Compare {
        /// Reader votes CSV covering the holdout records.
        #[arg(long)]
        votes: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lcdes: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
