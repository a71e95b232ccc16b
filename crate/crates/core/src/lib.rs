//! Four-region lung partition and opacity quantification for chest radiographs.
//!
//! The crate covers the full batch pipeline: candidate lung masks are fused by
//! pixelwise majority vote and post-processed ([`ensemble`]), a reference point
//! dividing upper from lower lungs is selected from carina / left-hilum
//! detections ([`landmarks`]), the lungs are partitioned into the four regions
//! RUR / RLR / LUR / LLR ([`regions`]), and per-region mean intensities are
//! computed after subtracting the mean intensity outside the lungs
//! ([`quantify`]). Evaluation statistics (Dice, average precision, Pearson
//! correlation, paired t-test) live in [`metrics`], and [`synth`] generates
//! seeded chest phantoms with known ground truth for end-to-end verification.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values;
// `x <= 0.0` would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod landmarks;
pub mod metrics;
mod numeric;
pub mod quantify;
pub mod raster;
pub mod regions;
pub mod synth;

pub use landmarks::{Detection, DetectionRecord, Landmark, ReferenceConfig, ReferencePoint, ReferenceSource};
pub use metrics::{CorrelationCell, DetectionEval, GroundTruthBox, RaleRecord, ScoreKind};
pub use quantify::{RegionStat, RegionStats};
pub use raster::{BinaryMask, BoundingBox, GrayImage, Point, Region, RegionMask};
pub use synth::{PhantomSpec, PhantomTruth, RegionScores};
