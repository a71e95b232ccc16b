use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use lungquad_core::landmarks::{read_detections_jsonl, Landmark};
use lungquad_core::metrics::{average_precision, GroundTruthBox};
use lungquad_core::raster::BoundingBox;

use crate::commands::write_json_pretty;
use crate::{CliError, CmdResult, CommandOutcome, GlobalArgs};

#[derive(Debug, Args)]
pub struct EvalDetArgs {
    /// Predicted detections (JSONL with confidence)
    #[arg(long)]
    pub pred: PathBuf,

    /// Ground-truth boxes: JSONL, or CSV with
    /// image_id,landmark,x_min,y_min,x_max,y_max
    #[arg(long)]
    pub gt: PathBuf,

    /// Match threshold on box IoU
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,

    /// Report JSON path (default: stdout only)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_landmark(name: &str) -> Option<Landmark> {
    match name {
        "carina" => Some(Landmark::Carina),
        "left_hilum" => Some(Landmark::LeftHilum),
        _ => None,
    }
}

/// Ground truth parses from JSONL or CSV, picked by extension.
fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthBox>, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    if ext.as_deref() == Some("csv") {
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let mut boxes = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.context("reading ground-truth CSV")?;
            let bad = |reason: String| {
                CliError::Data(anyhow::anyhow!("{} row {}: {reason}", path.display(), row + 2))
            };
            let image_id = record.get(0).ok_or_else(|| bad("missing image_id".into()))?.to_owned();
            let landmark = record
                .get(1)
                .and_then(parse_landmark)
                .ok_or_else(|| bad(format!("unknown landmark {:?}", record.get(1))))?;
            let mut coords = [0.0f64; 4];
            for (i, c) in coords.iter_mut().enumerate() {
                *c = record
                    .get(2 + i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(format!("bad coordinate in column {}", 2 + i)))?;
            }
            let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3])
                .map_err(|e| bad(e.to_string()))?;
            boxes.push(GroundTruthBox { image_id, landmark, bbox });
        }
        Ok(boxes)
    } else {
        let mut boxes = Vec::new();
        for (i, line) in std::io::BufRead::lines(BufReader::new(file)).enumerate() {
            let line = line.context("reading ground truth")?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: GroundTruthBox = serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?;
            boxes.push(parsed);
        }
        Ok(boxes)
    }
}

pub fn run(_global: &GlobalArgs, args: EvalDetArgs) -> CmdResult {
    let pred_file = File::open(&args.pred).with_context(|| format!("opening {}", args.pred.display()))?;
    let predictions =
        read_detections_jsonl(BufReader::new(pred_file)).context("parsing predictions")?;
    let ground_truth = read_ground_truth(&args.gt)?;

    let eval = average_precision(&predictions, &ground_truth, args.iou_threshold)
        .context("computing average precision")?;
    for class in &eval.skipped_classes {
        eprintln!("warning: no ground truth for class {class}; its AP is undefined and excluded from the mean");
    }

    let rendered = serde_json::to_string_pretty(&eval).context("serializing report")?;
    println!("{rendered}");
    if let Some(out) = &args.out {
        write_json_pretty(out, &eval)?;
    }
    Ok(CommandOutcome::Complete)
}
