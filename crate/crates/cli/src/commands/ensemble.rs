use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use lungquad_core::ensemble::{majority_vote, postprocess, EnsembleConfig};
use lungquad_core::raster::{load_mask, save_mask};

use crate::{CliError, CmdResult, CommandOutcome, GlobalArgs};

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Candidate mask files, any number >= 1
    #[arg(long, num_args = 1.., required = true)]
    pub masks: Vec<PathBuf>,

    /// Output path for the fused mask
    #[arg(long)]
    pub out: PathBuf,

    /// Connected components kept after hole filling
    #[arg(long, default_value_t = 2)]
    pub keep: usize,

    /// Write the raw vote result without hole filling / component removal
    #[arg(long)]
    pub vote_only: bool,
}

pub fn run(_global: &GlobalArgs, args: EnsembleArgs) -> CmdResult {
    if args.keep < 1 {
        return Err(CliError::Usage("--keep must be at least 1".into()));
    }
    let mut masks = Vec::with_capacity(args.masks.len());
    for path in &args.masks {
        masks.push(load_mask(path).with_context(|| format!("loading mask {}", path.display()))?);
    }
    let fused = majority_vote(&masks).context("fusing masks")?;
    let result = if args.vote_only {
        fused
    } else {
        postprocess(&fused, &EnsembleConfig { keep_components: args.keep })
    };
    save_mask(&result, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "fused {} masks -> {} ({} lung px)",
        masks.len(),
        args.out.display(),
        result.count_true()
    );
    Ok(CommandOutcome::Complete)
}
