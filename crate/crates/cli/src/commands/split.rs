use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use lungquad_core::ensemble::split_left_right;
use lungquad_core::raster::{load_mask, save_mask, save_region_mask, Point};
use lungquad_core::regions::split_four_regions;

use crate::{CmdResult, CommandOutcome, GlobalArgs};

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Fused lung mask (1 or 2 connected components)
    #[arg(long)]
    pub lung: PathBuf,

    /// Reference row dividing upper from lower regions
    #[arg(long)]
    pub ref_y: i64,

    /// Reference column; used as the split line when the lungs are fused
    #[arg(long)]
    pub ref_x: Option<u32>,

    /// Output path for the region label mask (codes 0..=4)
    #[arg(long)]
    pub out: PathBuf,

    /// Optionally write the separated right / left lung masks
    #[arg(long)]
    pub right_out: Option<PathBuf>,
    #[arg(long)]
    pub left_out: Option<PathBuf>,
}

pub fn run(_global: &GlobalArgs, args: SplitArgs) -> CmdResult {
    let lung = load_mask(&args.lung).with_context(|| format!("loading {}", args.lung.display()))?;
    let (right, left) = split_left_right(&lung, args.ref_x).context("separating lungs")?;
    let reference = Point::new(args.ref_x.map(i64::from).unwrap_or(0), args.ref_y);
    let regions = split_four_regions(&right, &left, reference).context("labeling regions")?;
    save_region_mask(&regions, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(path) = &args.right_out {
        save_mask(&right, path).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.left_out {
        save_mask(&left, path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(CommandOutcome::Complete)
}
