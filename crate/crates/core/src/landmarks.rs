//! Reference-point selection from carina and left-hilum detections.
//!
//! The left hilum divides upper from lower lungs when it is detected with
//! confidence strictly above the threshold. Otherwise the fallback is the
//! carina, whose center is projected downward by a fixed physical offset
//! (the carina sits a stable ~2 cm above the left hilum).

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::round_half_up;
use crate::raster::{BoundingBox, Point};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.9;
pub const DEFAULT_CARINA_OFFSET_MM: f64 = 20.0;

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("no usable detection: best hilum confidence {best_hilum:?} is at or below threshold and no carina detection exists")]
    NoUsableDetection { best_hilum: Option<f64> },
    #[error("reference row {y} falls outside image rows 0..{height}")]
    ReferenceOutOfBounds { y: i64, height: u32 },
    #[error("confidence {0} is outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("pixel spacing must be positive, got {0} mm")]
    InvalidSpacing(f64),
    #[error("invalid reference configuration: {0}")]
    InvalidConfig(String),
    #[error("detections line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Landmark classes produced by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Landmark {
    Carina,
    LeftHilum,
}

impl Landmark {
    pub const ALL: [Landmark; 2] = [Landmark::Carina, Landmark::LeftHilum];

    pub fn name(self) -> &'static str {
        match self {
            Landmark::Carina => "carina",
            Landmark::LeftHilum => "left_hilum",
        }
    }
}

impl std::fmt::Display for Landmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One detector output: landmark class, box, confidence in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub landmark: Landmark,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(landmark: Landmark, bbox: BoundingBox, confidence: f64) -> Result<Self, LandmarkError> {
        if !(0.0..=1.0).contains(&confidence) || confidence.is_nan() {
            return Err(LandmarkError::InvalidConfidence(confidence));
        }
        Ok(Self { landmark, bbox, confidence })
    }
}

/// Wire format for detection files: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    #[serde(flatten)]
    pub detection: Detection,
}

/// Parse a detections JSONL stream. Blank lines are skipped.
pub fn read_detections_jsonl<R: BufRead>(reader: R) -> Result<Vec<DetectionRecord>, LandmarkError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DetectionRecord = serde_json::from_str(&line)
            .map_err(|e| LandmarkError::Parse { line: i + 1, reason: e.to_string() })?;
        if !(0.0..=1.0).contains(&record.detection.confidence) {
            return Err(LandmarkError::Parse {
                line: i + 1,
                reason: format!("confidence {} outside [0, 1]", record.detection.confidence),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Group parsed detection records by image id (sorted for determinism).
pub fn group_by_image(records: Vec<DetectionRecord>) -> BTreeMap<String, Vec<Detection>> {
    let mut map: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for record in records {
        map.entry(record.image_id).or_default().push(record.detection);
    }
    map
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceConfig {
    /// Hilum detections at or below this confidence are distrusted.
    pub confidence_threshold: f64,
    /// Downward offset applied to the carina center in the fallback path.
    pub carina_offset_mm: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            carina_offset_mm: DEFAULT_CARINA_OFFSET_MM,
        }
    }
}

impl ReferenceConfig {
    pub fn validate(&self) -> Result<(), LandmarkError> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(LandmarkError::InvalidConfig(format!(
                "confidence threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        if !(self.carina_offset_mm >= 0.0) {
            return Err(LandmarkError::InvalidConfig(format!(
                "carina offset {} mm is negative",
                self.carina_offset_mm
            )));
        }
        Ok(())
    }
}

/// Which landmark produced the reference point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    Hilum,
    Carina,
}

impl std::fmt::Display for ReferenceSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReferenceSource::Hilum => "hilum",
            ReferenceSource::Carina => "carina",
        })
    }
}

/// Selected reference point with its provenance, for audit logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferencePoint {
    pub point: Point,
    pub source: ReferenceSource,
    /// Confidence of the detection the point came from.
    pub confidence: f64,
}

/// Highest-confidence detection of one class; ties break toward the box with
/// smaller y_min, then smaller x_min.
fn best_of_class(detections: &[Detection], class: Landmark) -> Option<&Detection> {
    detections
        .iter()
        .filter(|d| d.landmark == class)
        .max_by(|a, b| {
            a.confidence
                .total_cmp(&b.confidence)
                .then(b.bbox.y_min().total_cmp(&a.bbox.y_min()))
                .then(b.bbox.x_min().total_cmp(&a.bbox.x_min()))
        })
}

/// Select the point dividing upper from lower lungs.
///
/// The best left-hilum detection wins when its confidence is strictly above
/// the threshold; at or below it ("lower or equal" distrust rule) the carina
/// center shifted down by `round(offset_mm / spacing_mm)` pixels is used.
pub fn select_reference_point(
    detections: &[Detection],
    spacing_mm: f64,
    config: &ReferenceConfig,
    image_height: u32,
) -> Result<ReferencePoint, LandmarkError> {
    if !(spacing_mm > 0.0) {
        return Err(LandmarkError::InvalidSpacing(spacing_mm));
    }
    config.validate()?;

    let best_hilum = best_of_class(detections, Landmark::LeftHilum);
    let best_carina = best_of_class(detections, Landmark::Carina);

    let candidate = match best_hilum {
        Some(hilum) if hilum.confidence > config.confidence_threshold => ReferencePoint {
            point: hilum.bbox.center(),
            source: ReferenceSource::Hilum,
            confidence: hilum.confidence,
        },
        _ => {
            let carina = best_carina.ok_or(LandmarkError::NoUsableDetection {
                best_hilum: best_hilum.map(|d| d.confidence),
            })?;
            let center = carina.bbox.center();
            let offset_px = round_half_up(config.carina_offset_mm / spacing_mm);
            ReferencePoint {
                point: Point::new(center.x, center.y + offset_px),
                source: ReferenceSource::Carina,
                confidence: carina.confidence,
            }
        }
    };

    if candidate.point.y < 0 || candidate.point.y >= i64::from(image_height) {
        return Err(LandmarkError::ReferenceOutOfBounds { y: candidate.point.y, height: image_height });
    }
    Ok(candidate)
}
