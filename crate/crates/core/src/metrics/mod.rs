//! Evaluation statistics: Dice overlap, box IoU, average precision over
//! greedy confidence-ranked matching, Pearson correlation with analytic
//! p-value, the paired t-test used for ensemble-vs-single comparisons, and
//! the RALE score correlation report.

mod special;

use std::collections::{BTreeMap, HashMap};
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landmarks::{DetectionRecord, Landmark};
use crate::quantify::RegionStats;
use crate::raster::{BinaryMask, BoundingBox, Region};
use special::student_t_two_sided_p;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask dimensions differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    DimensionMismatch { a_w: u32, a_h: u32, b_w: u32, b_h: u32 },
    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("correlation is undefined for a constant input (zero variance)")]
    ConstantInput,
    #[error("IoU threshold {0} must lie in (0, 1]")]
    InvalidIouThreshold(f64),
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("CSV row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// Dice overlap 2|A∩B| / (|A|+|B|); two empty masks agree vacuously (1.0).
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricsError::DimensionMismatch {
            a_w: a.width(),
            a_h: a.height(),
            b_w: b.width(),
            b_h: b.height(),
        });
    }
    let mut intersection = 0usize;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        intersection += usize::from(x && y);
    }
    let total = a.count_true() + b.count_true();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * intersection as f64 / total as f64)
}

/// Intersection-over-union of two boxes, 0 when disjoint.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let ih = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let intersection = iw * ih;
    if intersection == 0.0 {
        return 0.0;
    }
    intersection / (a.area() + b.area() - intersection)
}

/// One annotated landmark box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub landmark: Landmark,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub landmark: Landmark,
    pub ap: f64,
    pub ground_truth: usize,
    pub predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionEval {
    pub iou_threshold: f64,
    pub per_class: Vec<ClassAp>,
    /// Unweighted mean of the per-class APs.
    pub mean_ap: f64,
    /// Classes with no ground truth: AP undefined, excluded from the mean.
    pub skipped_classes: Vec<Landmark>,
}

/// Average precision with greedy matching.
///
/// Predictions are ranked by descending confidence (ties keep input order)
/// and each is matched to the unmatched same-image, same-class ground truth
/// with the highest IoU; a match at or above the threshold is a true
/// positive. AP is the area under the all-point interpolated
/// precision-recall curve; the mean is unweighted over classes.
pub fn average_precision(
    predictions: &[DetectionRecord],
    ground_truth: &[GroundTruthBox],
    iou_threshold: f64,
) -> Result<DetectionEval, MetricsError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(MetricsError::InvalidIouThreshold(iou_threshold));
    }
    if ground_truth.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }

    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for class in Landmark::ALL {
        let mut gt_by_image: HashMap<&str, Vec<(&BoundingBox, bool)>> = HashMap::new();
        let mut total_gt = 0usize;
        for gt in ground_truth.iter().filter(|g| g.landmark == class) {
            gt_by_image.entry(&gt.image_id).or_default().push((&gt.bbox, false));
            total_gt += 1;
        }
        let mut preds: Vec<&DetectionRecord> =
            predictions.iter().filter(|p| p.detection.landmark == class).collect();
        if total_gt == 0 {
            skipped.push(class);
            continue;
        }
        // descending confidence; stable sort keeps input order on ties
        preds.sort_by(|a, b| b.detection.confidence.total_cmp(&a.detection.confidence));

        let mut tp_flags = Vec::with_capacity(preds.len());
        for pred in &preds {
            let candidates = gt_by_image.get_mut(pred.image_id.as_str());
            let best = candidates.and_then(|slots| {
                slots
                    .iter_mut()
                    .filter(|(_, matched)| !matched)
                    .map(|slot| (box_iou(&pred.detection.bbox, slot.0), slot))
                    .max_by(|(iou_a, _), (iou_b, _)| iou_a.total_cmp(iou_b))
            });
            match best {
                Some((iou, slot)) if iou >= iou_threshold => {
                    slot.1 = true;
                    tp_flags.push(true);
                }
                _ => tp_flags.push(false),
            }
        }

        per_class.push(ClassAp {
            landmark: class,
            ap: all_point_ap(&tp_flags, total_gt),
            ground_truth: total_gt,
            predictions: preds.len(),
        });
    }

    let mean_ap = per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64;
    Ok(DetectionEval { iou_threshold, per_class, mean_ap, skipped_classes: skipped })
}

/// Area under the all-point interpolated precision-recall curve.
fn all_point_ap(tp_flags: &[bool], total_gt: usize) -> f64 {
    if tp_flags.is_empty() {
        return 0.0;
    }
    let mut points = Vec::with_capacity(tp_flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &is_tp in tp_flags {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    for i in (0..points.len()).rev() {
        let (recall, precision) = points[i];
        envelope = envelope.max(precision);
        let prev_recall = if i == 0 { 0.0 } else { points[i - 1].0 };
        ap += (recall - prev_recall) * envelope;
    }
    ap
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PearsonResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation with a two-sided p-value from the t-distribution with
/// n-2 degrees of freedom (t-CDF via the regularized incomplete beta).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<PearsonResult, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(MetricsError::TooFewSamples { got: n, need: 3 });
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ConstantInput);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        student_t_two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(PearsonResult { r, p_value, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTTest {
    pub t: f64,
    pub p_value: f64,
    pub df: usize,
    /// Set when the differences are constant but nonzero: the statistic
    /// degenerates (infinite t), reported as p = 0.
    pub degenerate: bool,
}

/// Two-sided paired t-test on the differences a - b.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch { left: a.len(), right: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { got: n, need: 2 });
    }
    let nf = n as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
    let df = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            PairedTTest { t: 0.0, p_value: 1.0, df, degenerate: false }
        } else {
            PairedTTest { t: mean.signum() * f64::INFINITY, p_value: 0.0, df, degenerate: true }
        });
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    Ok(PairedTTest { t, p_value: student_t_two_sided_p(t, df as f64), df, degenerate: false })
}

/// Radiologist scores for one region of one image: extent 0-4, density 0-3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaleRecord {
    pub image_id: String,
    pub region: Region,
    pub extent: u8,
    pub density: u8,
}

impl RaleRecord {
    pub fn new(image_id: String, region: Region, extent: u8, density: u8) -> Option<Self> {
        (extent <= 4 && density <= 3).then_some(Self { image_id, region, extent, density })
    }
}

/// Total RALE score of one image: sum over regions of extent x density.
pub fn rale_total<'a>(records: impl IntoIterator<Item = &'a RaleRecord>) -> u32 {
    records.into_iter().map(|r| u32::from(r.extent) * u32::from(r.density)).sum()
}

/// Read `image_id,region,extent,density` rows.
pub fn read_rale_csv<R: io::Read>(reader: R) -> Result<Vec<RaleRecord>, MetricsError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut records = Vec::new();
    for (row, record) in csv_reader.records().enumerate() {
        let record = record?;
        let bad = |reason: String| MetricsError::BadRow { row: row + 2, reason };
        let image_id = record.get(0).ok_or_else(|| bad("missing image_id".into()))?.to_owned();
        let region = record
            .get(1)
            .and_then(Region::parse_abbrev)
            .ok_or_else(|| bad(format!("unknown region {:?}", record.get(1))))?;
        let extent: u8 = record
            .get(2)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad extent".into()))?;
        let density: u8 = record
            .get(3)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad density".into()))?;
        let rale = RaleRecord::new(image_id, region, extent, density)
            .ok_or_else(|| bad(format!("scores out of range: extent {extent} (0-4), density {density} (0-3)")))?;
        records.push(rale);
    }
    Ok(records)
}

pub fn write_rale_csv<W: io::Write>(writer: W, records: &[RaleRecord]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["image_id", "region", "extent", "density"])?;
    for r in records {
        out.write_record([
            r.image_id.as_str(),
            r.region.abbrev(),
            &r.extent.to_string(),
            &r.density.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Which RALE score a correlation cell is against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Extent,
    Density,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 2] = [ScoreKind::Extent, ScoreKind::Density];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Extent => "extent",
            ScoreKind::Density => "density",
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One stats row joined with its RALE scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinedSample {
    pub image_id: String,
    pub region: Region,
    pub extent: u8,
    pub density: u8,
    pub mean_normalized_intensity: f64,
}

/// Join stats and scores on (image_id, region). With the positive-total
/// filter, images whose total RALE score is 0 are excluded before
/// correlation. Regions with no computed mean never join.
pub fn join_rale(
    stats: &[RegionStats],
    scores: &[RaleRecord],
    filter_positive_total: bool,
) -> Vec<JoinedSample> {
    let mut means: HashMap<(&str, Region), f64> = HashMap::new();
    for s in stats {
        for (region, stat) in s.iter() {
            if let Some(mean) = stat.mean_normalized_intensity {
                means.entry((s.image_id.as_str(), region)).or_insert(mean);
            }
        }
    }
    let mut totals: BTreeMap<&str, u32> = BTreeMap::new();
    for record in scores {
        *totals.entry(record.image_id.as_str()).or_default() +=
            u32::from(record.extent) * u32::from(record.density);
    }
    scores
        .iter()
        .filter(|record| !filter_positive_total || totals[record.image_id.as_str()] > 0)
        .filter_map(|record| {
            means.get(&(record.image_id.as_str(), record.region)).map(|&mean| JoinedSample {
                image_id: record.image_id.clone(),
                region: record.region,
                extent: record.extent,
                density: record.density,
                mean_normalized_intensity: mean,
            })
        })
        .collect()
}

/// One region x score-kind correlation outcome. `r`/`p` are present on
/// success; `error` explains cells that could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationCell {
    pub region: Region,
    pub score_kind: ScoreKind,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CorrelationCell {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Correlate region means with extent and density scores: 4 regions x 2
/// score kinds = 8 cells, in fixed region order.
pub fn correlate_rale(
    stats: &[RegionStats],
    scores: &[RaleRecord],
    filter_positive_total: bool,
) -> Vec<CorrelationCell> {
    let joined = join_rale(stats, scores, filter_positive_total);
    let mut cells = Vec::with_capacity(8);
    for region in Region::ALL {
        let samples: Vec<&JoinedSample> = joined.iter().filter(|j| j.region == region).collect();
        for kind in ScoreKind::ALL {
            let x: Vec<f64> = samples.iter().map(|j| j.mean_normalized_intensity).collect();
            let y: Vec<f64> = samples
                .iter()
                .map(|j| match kind {
                    ScoreKind::Extent => f64::from(j.extent),
                    ScoreKind::Density => f64::from(j.density),
                })
                .collect();
            let cell = match pearson(&x, &y) {
                Ok(result) => CorrelationCell {
                    region,
                    score_kind: kind,
                    n: result.n,
                    r: Some(result.r),
                    p: Some(result.p_value),
                    error: None,
                },
                Err(e) => CorrelationCell {
                    region,
                    score_kind: kind,
                    n: x.len(),
                    r: None,
                    p: None,
                    error: Some(e.to_string()),
                },
            };
            cells.push(cell);
        }
    }
    cells
}
