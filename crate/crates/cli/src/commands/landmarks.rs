use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use lungquad_core::landmarks::{
    group_by_image, read_detections_jsonl, select_reference_point, ReferenceConfig,
};
use lungquad_core::raster::DEFAULT_SPACING_MM;
use serde::Serialize;

use crate::{CliError, CmdResult, CommandOutcome, GlobalArgs};

#[derive(Debug, Args)]
pub struct LandmarksArgs {
    /// Detections JSONL: {"image_id", "landmark", "box", "confidence"} per line
    #[arg(long)]
    pub detections: PathBuf,

    /// Image height in pixels, for bounds-checking the reference row
    #[arg(long)]
    pub image_height: u32,

    /// Only process this image id (default: all ids in the file)
    #[arg(long)]
    pub image_id: Option<String>,

    /// Hilum detections at or below this confidence fall back to the carina
    #[arg(long, default_value_t = 0.9)]
    pub confidence_threshold: f64,

    /// Physical offset applied below the carina center in the fallback path
    #[arg(long, default_value_t = 20.0)]
    pub carina_offset_mm: f64,

    /// Write the JSONL output here in addition to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ReferenceLine<'a> {
    image_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    point: Option<[i64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<lungquad_core::ReferenceSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn run(global: &GlobalArgs, args: LandmarksArgs) -> CmdResult {
    let spacing = global.spacing_mm.unwrap_or_else(|| {
        eprintln!("warning: no --spacing-mm given, defaulting to {DEFAULT_SPACING_MM} mm/pixel");
        DEFAULT_SPACING_MM
    });
    let config = ReferenceConfig {
        confidence_threshold: args.confidence_threshold,
        carina_offset_mm: args.carina_offset_mm,
    };

    let file = File::open(&args.detections)
        .with_context(|| format!("opening {}", args.detections.display()))?;
    let records = read_detections_jsonl(BufReader::new(file)).context("parsing detections")?;
    let mut grouped = group_by_image(records);
    if let Some(id) = &args.image_id {
        let only = grouped
            .remove(id)
            .ok_or_else(|| CliError::Data(anyhow::anyhow!("no detections for image id {id}")))?;
        grouped = std::iter::once((id.clone(), only)).collect();
    }

    let mut lines = Vec::new();
    let (mut ok, mut failed) = (0usize, 0usize);
    for (image_id, detections) in &grouped {
        let line = match select_reference_point(detections, spacing, &config, args.image_height) {
            Ok(reference) => {
                ok += 1;
                ReferenceLine {
                    image_id,
                    point: Some([reference.point.x, reference.point.y]),
                    source: Some(reference.source),
                    confidence: Some(reference.confidence),
                    error: None,
                }
            }
            Err(e) => {
                failed += 1;
                ReferenceLine { image_id, point: None, source: None, confidence: None, error: Some(e.to_string()) }
            }
        };
        lines.push(serde_json::to_string(&line).context("serializing reference line")?);
    }

    let body = lines.join("\n") + "\n";
    print!("{body}");
    if let Some(out) = &args.out {
        let mut file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
        file.write_all(body.as_bytes()).with_context(|| format!("writing {}", out.display()))?;
    }

    match (ok, failed) {
        (0, _) => Err(CliError::Data(anyhow::anyhow!("no image produced a usable reference point"))),
        (_, 0) => Ok(CommandOutcome::Complete),
        _ => Ok(CommandOutcome::Partial),
    }
}
