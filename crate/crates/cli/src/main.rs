//! `msi`: data generation, training, evaluation, cross-validation,
//! standalone compression and gradient audits.
//!
//! Results are JSON lines on stdout, the first of which is always the fully
//! resolved config. Diagnostics go to stderr, filtered by `MSI_LOG`
//! (`quiet`, `info` or `debug`).
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data or format error,
//! 3 failed check.

mod commands;
mod run_config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<msi_core::Error> for CliError {
    fn from(e: msi_core::Error) -> Self {
        match e {
            msi_core::Error::Config(_) => Self::config(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "msi", version, about = "Semantic-guided multimodal emotion recognition toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; omitted keys take defaults
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the data and model seeds
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (dataset, checkpoint or report, depending on the command)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic MSIF dataset
    GenData,
    /// Train a model and write a checkpoint
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Continue from this checkpoint (its model config is kept)
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides model.epochs
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// K-fold cross-validation
    Crossval {
        #[arg(long)]
        data: PathBuf,
        /// Overrides crossval.folds
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Compress one record's visual tokens and report the routing
    Compress {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        id: String,
        /// Guide compression with this checkpoint's text/audio fusion
        /// instead of a zero guidance vector
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Score with raw dot products instead of cosine similarity
        #[arg(long)]
        raw_dot: bool,
    },
    /// Finite-difference audit of all analytic gradients
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn init_logging() -> Result<(), CliError> {
    let level = match std::env::var("MSI_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => {
            return Err(CliError::config(format!(
                "MSI_LOG must be quiet, info or debug, got `{other}`"
            )))
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = init_logging().and_then(|_| commands::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
