//! Command-line frontend wiring the pipeline stages into batch commands.
//!
//! Exposed as a library so integration tests can drive commands in-process.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 partial failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Usage,
    DataError,
    Partial,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Usage => 1,
            ExitStatus::DataError => 2,
            ExitStatus::Partial => 3,
        }
    }
}

/// How a command finished when it did not error out entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandOutcome {
    Complete,
    /// Some per-image work failed but the batch produced output.
    Partial,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] anyhow::Error),
}

pub type CmdResult = Result<CommandOutcome, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "lungquad",
    version,
    about = "Four-region lung partition and opacity quantification for chest radiographs"
)]
pub struct Cli {
    /// Pixel spacing in mm/pixel; per-image `<image>.meta` sidecars override it
    #[arg(long, global = true)]
    pub spacing_mm: Option<f64>,

    /// Worker threads for batch commands (default: available cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Seed override for generators
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory for commands that write multiple artifacts
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse candidate lung masks by majority vote and post-process
    Ensemble(commands::ensemble::EnsembleArgs),
    /// Select upper/lower reference points from landmark detections
    Landmarks(commands::landmarks::LandmarksArgs),
    /// Split a fused lung mask into the four-region label mask
    Split(commands::split::SplitArgs),
    /// Normalize an image against its non-lung background and compute region means
    Quantify(commands::quantify::QuantifyArgs),
    /// Run the full per-image pipeline over a manifest
    Pipeline(commands::pipeline::PipelineArgs),
    /// Compare segmentation model directories against ground truth
    EvalSeg(commands::eval_seg::EvalSegArgs),
    /// Score landmark detections against ground truth boxes
    EvalDet(commands::eval_det::EvalDetArgs),
    /// Correlate region stats with RALE scores
    Correlate(commands::correlate::CorrelateArgs),
    /// Generate chest phantoms with known ground truth
    Synth(commands::synth::SynthArgs),
}

/// Dispatch a parsed invocation and map errors onto exit codes.
pub fn run(cli: Cli) -> ExitStatus {
    let global = GlobalArgs {
        spacing_mm: cli.spacing_mm,
        jobs: cli.jobs,
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    if let Some(s) = global.spacing_mm {
        if !(s > 0.0) {
            eprintln!("error: --spacing-mm must be positive, got {s}");
            return ExitStatus::Usage;
        }
    }
    let result = match cli.command {
        Command::Ensemble(args) => commands::ensemble::run(&global, args),
        Command::Landmarks(args) => commands::landmarks::run(&global, args),
        Command::Split(args) => commands::split::run(&global, args),
        Command::Quantify(args) => commands::quantify::run(&global, args),
        Command::Pipeline(args) => commands::pipeline::run(&global, args),
        Command::EvalSeg(args) => commands::eval_seg::run(&global, args),
        Command::EvalDet(args) => commands::eval_det::run(&global, args),
        Command::Correlate(args) => commands::correlate::run(&global, args),
        Command::Synth(args) => commands::synth::run(&global, args),
    };
    match result {
        Ok(CommandOutcome::Complete) => ExitStatus::Success,
        Ok(CommandOutcome::Partial) => ExitStatus::Partial,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitStatus::Usage
        }
        Err(CliError::Data(err)) => {
            eprintln!("error: {err:#}");
            ExitStatus::DataError
        }
    }
}

/// Values of the global flags, passed to every command.
#[derive(Debug, Clone, Default)]
pub struct GlobalArgs {
    pub spacing_mm: Option<f64>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl GlobalArgs {
    /// The output directory, preferring the flag over a fallback.
    pub fn out_dir_or(&self, fallback: Option<&std::path::Path>) -> Result<PathBuf, CliError> {
        self.out_dir
            .clone()
            .or_else(|| fallback.map(|p| p.to_path_buf()))
            .ok_or_else(|| CliError::Usage("--out-dir is required".into()))
    }
}
