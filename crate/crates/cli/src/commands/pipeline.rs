//! The full per-image pipeline: fuse candidate masks, post-process, pick the
//! reference point, label the four regions, quantify. Images are processed
//! in parallel but all artifacts are emitted in manifest order, so repeated
//! runs are byte-identical. A malformed image is logged and skipped; it never
//! aborts the batch.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use lungquad_core::ensemble::{majority_vote, postprocess, EnsembleConfig};
use lungquad_core::landmarks::{
    group_by_image, read_detections_jsonl, select_reference_point, Detection, Landmark,
    ReferenceConfig,
};
use lungquad_core::quantify::{normalize_and_quantify, write_region_stats_csv, RegionStats};
use lungquad_core::raster::{load_image_auto, load_mask, save_mask, save_region_mask, SpacingSource};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{ManifestImage, RunManifest};
use crate::{commands::ensure_dir, CliError, CmdResult, CommandOutcome, GlobalArgs};

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Run manifest (JSON) listing images, candidate masks and detections
    #[arg(long)]
    pub manifest: PathBuf,

    /// Connected components kept after hole filling
    #[arg(long, default_value_t = 2)]
    pub keep: usize,

    /// Pixels stripped from each raster edge before the background mean
    #[arg(long, default_value_t = 0)]
    pub crop_border: u32,

    /// Hilum detections at or below this confidence fall back to the carina
    #[arg(long, default_value_t = 0.9)]
    pub confidence_threshold: f64,

    /// Physical offset applied below the carina center in the fallback path
    #[arg(long, default_value_t = 20.0)]
    pub carina_offset_mm: f64,
}

/// One structured log record per image; written as JSONL, no timestamps.
#[derive(Debug, Serialize)]
struct ImageLog {
    image_id: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_source: Option<lungquad_core::ReferenceSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_point: Option<[i64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hilum_confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    carina_confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spacing_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spacing_source: Option<SpacingSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

struct ImageOutcome {
    log: ImageLog,
    stats: Option<RegionStats>,
}

pub fn run(global: &GlobalArgs, args: PipelineArgs) -> CmdResult {
    if args.keep < 1 {
        return Err(CliError::Usage("--keep must be at least 1".into()));
    }
    let manifest = RunManifest::load(&args.manifest)?;
    let out_dir = global.out_dir_or(manifest.out_dir.as_deref())?;
    for sub in ["fused", "right", "left", "regions"] {
        ensure_dir(&out_dir.join(sub))?;
    }

    let detections_file = File::open(&manifest.detections)
        .with_context(|| format!("opening {}", manifest.detections.display()))?;
    let detections = group_by_image(
        read_detections_jsonl(BufReader::new(detections_file)).context("parsing detections")?,
    );

    let reference_config = ReferenceConfig {
        confidence_threshold: args.confidence_threshold,
        carina_offset_mm: args.carina_offset_mm,
    };
    let ensemble_config = EnsembleConfig { keep_components: args.keep };
    let explicit_spacing = global.spacing_mm.or(manifest.spacing_mm);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(global.jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    let outcomes: Vec<ImageOutcome> = pool.install(|| {
        manifest
            .images
            .par_iter()
            .map(|entry| {
                process_image(
                    entry,
                    detections.get(&entry.id()).map(Vec::as_slice),
                    explicit_spacing,
                    &reference_config,
                    &ensemble_config,
                    args.crop_border,
                    &out_dir,
                )
            })
            .collect()
    });

    let mut log_file = File::create(out_dir.join("pipeline_log.jsonl"))
        .with_context(|| format!("creating log in {}", out_dir.display()))?;
    let mut stats = Vec::new();
    let (mut ok, mut failed) = (0usize, 0usize);
    for outcome in &outcomes {
        let line = serde_json::to_string(&outcome.log).context("serializing log record")?;
        writeln!(log_file, "{line}").context("writing log")?;
        match (&outcome.stats, &outcome.log.error) {
            (Some(s), _) => {
                ok += 1;
                let source = outcome.log.reference_source.expect("set on success");
                eprintln!("{}: ok source={source}", s.image_id);
                stats.push(s.clone());
            }
            (None, err) => {
                failed += 1;
                eprintln!(
                    "{}: skipped ({})",
                    outcome.log.image_id,
                    err.as_deref().unwrap_or("unknown error")
                );
            }
        }
    }

    let csv_file = File::create(out_dir.join("region_stats.csv"))
        .with_context(|| format!("creating region_stats.csv in {}", out_dir.display()))?;
    write_region_stats_csv(csv_file, &stats).context("writing region stats")?;

    match (ok, failed) {
        (0, _) => Err(CliError::Data(anyhow::anyhow!("no image in the manifest succeeded"))),
        (_, 0) => Ok(CommandOutcome::Complete),
        _ => Ok(CommandOutcome::Partial),
    }
}

fn process_image(
    entry: &ManifestImage,
    detections: Option<&[Detection]>,
    explicit_spacing: Option<f64>,
    reference_config: &ReferenceConfig,
    ensemble_config: &EnsembleConfig,
    crop_border: u32,
    out_dir: &Path,
) -> ImageOutcome {
    let image_id = entry.id();
    let mut log = ImageLog {
        image_id: image_id.clone(),
        status: "error",
        reference_source: None,
        reference_point: None,
        hilum_confidence: None,
        carina_confidence: None,
        spacing_mm: None,
        spacing_source: None,
        error: None,
    };

    match run_stages(entry, detections, explicit_spacing, reference_config, ensemble_config, crop_border, out_dir, &mut log) {
        Ok(stats) => {
            log.status = "ok";
            ImageOutcome { log, stats: Some(stats) }
        }
        Err(e) => {
            log.error = Some(format!("{e:#}"));
            ImageOutcome { log, stats: None }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_stages(
    entry: &ManifestImage,
    detections: Option<&[Detection]>,
    explicit_spacing: Option<f64>,
    reference_config: &ReferenceConfig,
    ensemble_config: &EnsembleConfig,
    crop_border: u32,
    out_dir: &Path,
    log: &mut ImageLog,
) -> anyhow::Result<RegionStats> {
    let image_id = entry.id();
    let (image, spacing_source) = load_image_auto(&entry.image, explicit_spacing)
        .with_context(|| format!("loading {}", entry.image.display()))?;
    log.spacing_mm = Some(image.spacing_mm());
    log.spacing_source = Some(spacing_source);

    let mut masks = Vec::with_capacity(entry.masks.len());
    for path in &entry.masks {
        let mask = load_mask(path).with_context(|| format!("loading mask {}", path.display()))?;
        if mask.dimensions() != image.dimensions() {
            anyhow::bail!(
                "mask {} is {}x{} but the image is {}x{}",
                path.display(),
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            );
        }
        masks.push(mask);
    }

    let fused = postprocess(&majority_vote(&masks).context("majority vote")?, ensemble_config);

    let detections = detections.ok_or_else(|| anyhow::anyhow!("no detections for image id {image_id}"))?;
    for class in Landmark::ALL {
        let best = detections
            .iter()
            .filter(|d| d.landmark == class)
            .map(|d| d.confidence)
            .fold(None::<f64>, |acc, c| Some(acc.map_or(c, |a| a.max(c))));
        match class {
            Landmark::Carina => log.carina_confidence = best,
            Landmark::LeftHilum => log.hilum_confidence = best,
        }
    }
    let reference =
        select_reference_point(detections, image.spacing_mm(), reference_config, image.height())
            .context("selecting reference point")?;
    log.reference_source = Some(reference.source);
    log.reference_point = Some([reference.point.x, reference.point.y]);

    let fallback_column = reference.point.x.clamp(0, i64::from(image.width())) as u32;
    let (right, left) = lungquad_core::ensemble::split_left_right(&fused, Some(fallback_column))
        .context("separating lungs")?;
    let regions = lungquad_core::regions::split_four_regions(&right, &left, reference.point)
        .context("labeling regions")?;
    let stats = normalize_and_quantify(&image, &fused, &regions, &image_id, crop_border)
        .context("quantifying")?;

    let file_name = format!("{image_id}.png");
    save_mask(&fused, &out_dir.join("fused").join(&file_name)).context("writing fused mask")?;
    save_mask(&right, &out_dir.join("right").join(&file_name)).context("writing right mask")?;
    save_mask(&left, &out_dir.join("left").join(&file_name)).context("writing left mask")?;
    save_region_mask(&regions, &out_dir.join("regions").join(&file_name)).context("writing region mask")?;
    Ok(stats)
}
