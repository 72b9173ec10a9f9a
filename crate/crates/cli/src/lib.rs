//! Command-line front end: featurize audio manifests, train single folds,
//! cross-validate, evaluate, predict, sweep mixup alpha, export PCA
//! embeddings and compare confusion matrices.
//!
//! Every command ends by printing one JSON object on its own line whose
//! last field is `status`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use escnet::harness::HarnessError;
use escnet::nn::NnError;
use serde_json::{Map, Value};
use thiserror::Error;

pub use config::{ConfigError, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Harness(HarnessError::NumericFailure { .. }) => EXIT_NUMERIC,
            CliError::Data(_) | CliError::Harness(_) => EXIT_DATA,
        }
    }

    pub fn status(&self) -> &'static str {
        match self.exit_code() {
            EXIT_USAGE => "usage_error",
            EXIT_NUMERIC => "numeric_failure",
            _ => "data_error",
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        CliError::Harness(e.into())
    }
}

/// Key-value pairs reported in the closing JSON line.
#[derive(Debug, Default)]
pub struct Summary(Map<String, Value>);

impl Summary {
    pub fn put(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    fn line(mut self, command: &str, status: &str) -> String {
        let mut out = Map::new();
        out.insert("command".into(), command.into());
        out.append(&mut self.0);
        out.insert("status".into(), status.into());
        Value::Object(out).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "escnet",
    version,
    about = "Environmental sound classification with mixup-trained CNNs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Per-epoch progress on stderr.
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic four-class set as WAV files plus a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = escnet::synth::DEFAULT_DURATION_S)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract spectrograms (and augmented copies) for every manifest row.
    Featurize(Common),
    /// Train one fold and write its checkpoint, statistics and log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Held-out fold, 1-based.
        #[arg(long)]
        fold: usize,
    },
    /// Train and validate every fold.
    Crossval {
        #[command(flatten)]
        common: Common,
        /// Worker threads; ignored in deterministic mode.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Score a trained fold on its held-out clips.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Held-out fold, 1-based.
        #[arg(long)]
        fold: usize,
    },
    /// Print class probabilities for WAV files, or for the fold's held-out
    /// clips when none are given.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Held-out fold, 1-based.
        #[arg(long)]
        fold: usize,
        wavs: Vec<PathBuf>,
    },
    /// Cross-validate once per mixup alpha.
    AlphaSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = escnet::mixup::ALPHA_GRID)]
        alphas: Vec<f64>,
        /// Worker threads; ignored in deterministic mode.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Export a 2-D PCA of FC1 activations for the fold's held-out clips.
    Embed {
        #[command(flatten)]
        common: Common,
        /// Held-out fold, 1-based.
        #[arg(long)]
        fold: usize,
    },
    /// Row-normalized confusion of predictions A minus predictions B.
    Confusion {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Featurize(_) => "featurize",
            Command::Train { .. } => "train",
            Command::Crossval { .. } => "crossval",
            Command::Evaluate { .. } => "evaluate",
            Command::Predict { .. } => "predict",
            Command::AlphaSweep { .. } => "alpha-sweep",
            Command::Embed { .. } => "embed",
            Command::Confusion { .. } => "confusion",
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, env_seed: Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            if code != EXIT_OK {
                let mut s = Summary::default();
                s.put("error", e.kind().to_string());
                println!("{}", s.line("escnet", "usage_error"));
            }
            return code;
        }
    };
    let name = cli.command.name();
    let mut summary = Summary::default();
    match commands::dispatch(cli.command, env_seed.as_deref(), &mut summary) {
        Ok(()) => {
            println!("{}", summary.line(name, "ok"));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            summary.put("error", e.to_string());
            println!("{}", summary.line(name, e.status()));
            e.exit_code()
        }
    }
}
