//! Command-line harness: `train`, `normalize`, `run` and `analyze`.
//!
//! Every command writes its artifacts plus a JSON manifest with a SHA-256
//! checksum per file. Exit codes: 0 on success, 1 for validation errors
//! (bad configuration, missing or malformed inputs), 2 for runtime failures.

mod analyze;
mod commands;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::model_io::{load_config, ExperimentConfig};

pub use analyze::{cmd_analyze, read_summary, SummaryRow, COMPARISON_FILE};
pub use commands::{
    cmd_normalize, cmd_run, cmd_train, BURST_COMPOSITION_FILE, FIRING_STATS_FILE,
    INFERENCE_CURVE_FILE, ISIH_FILE, NORMALIZE_MANIFEST, SUMMARY_FILE, TRAIN_MANIFEST,
};
pub use output::{fmt_float, read_manifest, sha256_file, FileEntry, RunManifest, RUN_MANIFEST};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "burst-snn",
    version,
    about = "DNN-to-SNN conversion with rate, phase and burst coding"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the MLP described by the config and write the model file.
    Train(CommonArgs),
    /// Normalize a trained model's weights on calibration data.
    Normalize(CommonArgs),
    /// Convert the normalized model and simulate it on the evaluation set.
    Run(CommonArgs),
    /// Join completed run directories into one comparison table.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Normalization percentile in (0, 100].
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Number of test images to evaluate (0 = full test set).
    #[arg(long)]
    pub subset: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Completed run directories.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Baseline run: a directory name among the runs, or a path.
    #[arg(long)]
    pub baseline: String,
    /// Config supplying energy profiles (defaults when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for comparison.csv (default: current directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    /// Loads the config and applies command-line overrides.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = load_config(&self.config).map_err(|e| CliError::Validation(e.to_string()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(p) = self.percentile {
            if !(p > 0.0 && p <= 100.0) {
                return Err(CliError::Validation(format!(
                    "--percentile must be in (0, 100], got {p}"
                )));
            }
            cfg.percentile = p;
        }
        if let Some(n) = self.subset {
            cfg.eval_subset = (n > 0).then_some(n);
        }
        Ok(cfg)
    }
}

/// Runs `f` on a pool of `workers` threads (`0` = the global pool).
pub(crate) fn with_workers<T: Send>(
    workers: usize,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?
        .install(f)
}

/// Executes a parsed command; returns the path of the manifest written.
pub fn execute(cli: &Cli) -> Result<PathBuf, CliError> {
    match &cli.command {
        Command::Train(a) => {
            let cfg = a.resolve()?;
            with_workers(cfg.workers, || cmd_train(&cfg))
        }
        Command::Normalize(a) => {
            let cfg = a.resolve()?;
            with_workers(cfg.workers, || cmd_normalize(&cfg))
        }
        Command::Run(a) => cmd_run(&a.resolve()?),
        Command::Analyze(a) => cmd_analyze(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(manifest) => {
            log::info!("wrote {}", manifest.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
