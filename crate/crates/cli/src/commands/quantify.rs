use std::fs::File;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use lungquad_core::quantify::{normalize_and_quantify, write_region_stats_csv};
use lungquad_core::raster::{load_image_auto, load_mask, load_region_mask, SpacingSource};

use crate::{CmdResult, CommandOutcome, GlobalArgs};

#[derive(Debug, Args)]
pub struct QuantifyArgs {
    /// Radiograph to quantify
    #[arg(long)]
    pub image: PathBuf,

    /// Final lung mask
    #[arg(long)]
    pub lung: PathBuf,

    /// Four-region label mask
    #[arg(long)]
    pub regions: PathBuf,

    /// Image id recorded in the CSV (default: image file stem)
    #[arg(long)]
    pub image_id: Option<String>,

    /// Pixels stripped from each raster edge before the background mean
    #[arg(long, default_value_t = 0)]
    pub crop_border: u32,

    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(global: &GlobalArgs, args: QuantifyArgs) -> CmdResult {
    let (image, spacing_source) = load_image_auto(&args.image, global.spacing_mm)
        .with_context(|| format!("loading {}", args.image.display()))?;
    if spacing_source == SpacingSource::Default {
        eprintln!(
            "warning: {} has no sidecar and no --spacing-mm was given; using the default {} mm/pixel",
            args.image.display(),
            image.spacing_mm()
        );
    }
    let lung = load_mask(&args.lung).with_context(|| format!("loading {}", args.lung.display()))?;
    let regions =
        load_region_mask(&args.regions).with_context(|| format!("loading {}", args.regions.display()))?;
    let image_id = args.image_id.clone().unwrap_or_else(|| {
        args.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| args.image.display().to_string())
    });

    let stats =
        normalize_and_quantify(&image, &lung, &regions, &image_id, args.crop_border).context("quantifying")?;
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_region_stats_csv(file, std::slice::from_ref(&stats)).context("writing stats CSV")?;
    eprintln!("{image_id}: background mean {:.3}", stats.background_mean);
    Ok(CommandOutcome::Complete)
}
