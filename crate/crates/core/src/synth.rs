//! Parametric chest-phantom generator.
//!
//! Phantoms trade anatomical realism for exactness: two elliptical lung
//! fields on a brighter body background, landmark boxes placed with a known
//! geometric relation (hilum center a fixed physical offset below the carina
//! box center), per-region opacity patches whose area fraction follows the
//! extent score and whose added intensity follows the density score, and RALE
//! records echoing the injected scores. Everything is a pure function of
//! (spec, seed), so pipeline outputs can be checked against closed forms.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::split_left_right;
use crate::landmarks::{Detection, DetectionRecord, Landmark, DEFAULT_CARINA_OFFSET_MM};
use crate::metrics::{GroundTruthBox, RaleRecord};
use crate::numeric::round_half_up;
use crate::raster::{BinaryMask, BoundingBox, GrayImage, Point, Region, RegionMask};
use crate::regions::split_four_regions;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("region {region} has {area} pixels, too small to carve an extent-{extent} patch")]
    RegionTooSmall { region: Region, extent: u8, area: u64 },
}

/// Extent (0-4) and density (0-3) injected into one region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegionScores {
    pub extent: u8,
    pub density: u8,
}

/// Paired (extent, density) severity steps, monotone in both scores, covering
/// the full extent and density ranges. Sweeping phantoms along this ladder
/// couples the two scores the way disease burden does, so both correlation
/// cells see a strong signal.
pub const SEVERITY_LADDER: [(u8, u8); 7] =
    [(0, 0), (1, 1), (2, 1), (2, 2), (3, 2), (3, 3), (4, 3)];

/// Scores for all four regions at one severity-ladder step.
pub fn severity_scores(level: usize) -> [RegionScores; 4] {
    let (extent, density) = SEVERITY_LADDER[level % SEVERITY_LADDER.len()];
    [RegionScores { extent, density }; 4]
}

pub const CARINA_BOX_PX: f64 = 100.0;
pub const HILUM_BOX_PX: f64 = 80.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub spacing_mm: f64,
    pub baseline_lung: f64,
    pub baseline_body: f64,
    /// Region order: RUR, RLR, LUR, LLR.
    pub scores: [RegionScores; 4],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            image_id: "phantom".into(),
            width: 256,
            height: 256,
            spacing_mm: 0.2,
            baseline_lung: 60.0,
            baseline_body: 180.0,
            scores: [RegionScores::default(); 4],
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn scores_for(&self, region: Region) -> RegionScores {
        self.scores[region.code() as usize - 1]
    }

    /// Intensity step per density point: (body - lung) / 3.
    pub fn density_step(&self) -> f64 {
        (self.baseline_body - self.baseline_lung) / 3.0
    }

    fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.width < 128 || self.height < 128 {
            return fail(format!("raster {}x{} is below the 128x128 minimum", self.width, self.height));
        }
        if !(self.spacing_mm > 0.0 && self.spacing_mm.is_finite()) {
            return fail(format!("spacing {} mm must be positive", self.spacing_mm));
        }
        if !(self.baseline_lung >= 0.0 && self.baseline_body.is_finite() && self.baseline_lung.is_finite()) {
            return fail("baselines must be finite and non-negative".into());
        }
        if self.baseline_body <= self.baseline_lung {
            return fail(format!(
                "baseline_body {} must exceed baseline_lung {}",
                self.baseline_body, self.baseline_lung
            ));
        }
        if self.baseline_body > 65535.0 {
            return fail("baseline_body exceeds the 16-bit range".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise sigma {} must be non-negative", self.noise_sigma));
        }
        for (i, s) in self.scores.iter().enumerate() {
            if s.extent > 4 || s.density > 3 {
                return fail(format!(
                    "{} scores out of range: extent {} (0-4), density {} (0-3)",
                    Region::ALL[i],
                    s.extent,
                    s.density
                ));
            }
        }
        Ok(())
    }
}

/// Generated phantom with every ground-truth artifact the pipeline consumes.
#[derive(Debug, Clone)]
pub struct PhantomTruth {
    pub image: GrayImage,
    pub lung_mask: BinaryMask,
    pub region_mask: RegionMask,
    /// Ground-truth landmark boxes, carried as detections with confidence 1.
    pub detections: Vec<DetectionRecord>,
    pub rale: Vec<RaleRecord>,
}

impl PhantomTruth {
    pub fn ground_truth_boxes(&self) -> Vec<GroundTruthBox> {
        self.detections
            .iter()
            .map(|d| GroundTruthBox {
                image_id: d.image_id.clone(),
                landmark: d.detection.landmark,
                bbox: d.detection.bbox,
            })
            .collect()
    }
}

fn clipped_box(cx: f64, cy: f64, side: f64, width: u32, height: u32) -> BoundingBox {
    let half = side / 2.0;
    BoundingBox::new(
        (cx - half).max(0.0),
        (cy - half).max(0.0),
        (cx + half).min(f64::from(width)),
        (cy + half).min(f64::from(height)),
    )
    .expect("raster is larger than zero")
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<PhantomTruth, SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (wf, hf) = (f64::from(w), f64::from(h));

    // two elliptical lung fields; the gap between their medial edges is 8%
    // of the width, so they always label as two components
    let semi_x = 0.16 * wf;
    let semi_y = 0.32 * hf;
    let center_y = 0.54 * hf;
    let inside = |x: u32, y: u32, cx: f64| {
        let dx = (f64::from(x) + 0.5 - cx) / semi_x;
        let dy = (f64::from(y) + 0.5 - center_y) / semi_y;
        dx * dx + dy * dy <= 1.0
    };
    let lung_mask =
        BinaryMask::from_fn(w, h, |x, y| inside(x, y, 0.30 * wf) || inside(x, y, 0.70 * wf));

    let (right_lung, left_lung) = split_left_right(&lung_mask, None)
        .map_err(|e| SynthError::InvalidSpec(format!("degenerate lung geometry: {e}")))?;

    let apex_y = lung_mask
        .bits()
        .iter()
        .position(|&b| b)
        .map(|i| (i / w as usize) as f64)
        .expect("ellipses are non-empty");
    let carina_box = clipped_box(wf / 2.0, apex_y, CARINA_BOX_PX, w, h);
    let carina_center = carina_box.center();

    let medial_col = (0..w)
        .find(|&x| (0..h).any(|y| left_lung.get(x, y)))
        .expect("left lung is non-empty");
    let offset_px = round_half_up(DEFAULT_CARINA_OFFSET_MM / spec.spacing_mm);
    let hilum_center = Point::new(i64::from(medial_col), carina_center.y + offset_px);
    let half = HILUM_BOX_PX / 2.0;
    let fits = hilum_center.x as f64 - half >= 0.0
        && hilum_center.y as f64 - half >= 0.0
        && hilum_center.x as f64 + half <= wf
        && hilum_center.y as f64 + half <= hf;
    if !fits {
        return Err(SynthError::InvalidSpec(format!(
            "hilum box around ({}, {}) does not fit a {w}x{h} raster; carina offset is {offset_px} px at {} mm/px",
            hilum_center.x, hilum_center.y, spec.spacing_mm
        )));
    }
    let hilum_box = clipped_box(hilum_center.x as f64, hilum_center.y as f64, HILUM_BOX_PX, w, h);

    let region_mask = split_four_regions(&right_lung, &left_lung, hilum_box.center())
        .map_err(|e| SynthError::InvalidSpec(format!("region split failed: {e}")))?;

    let mut pixels: Vec<f64> = lung_mask
        .bits()
        .iter()
        .map(|&b| if b { spec.baseline_lung } else { spec.baseline_body })
        .collect();

    paint_opacity_patches(spec, &region_mask, &mut pixels)?;

    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated finite");
        for p in &mut pixels {
            *p += normal.sample(&mut rng);
        }
    }
    for p in &mut pixels {
        *p = (round_half_up(*p).max(0) as f64).min(65535.0);
    }
    let image = GrayImage::new(w, h, pixels, spec.spacing_mm)
        .expect("pixels clamped into valid range");

    let mk_detection = |landmark: Landmark, bbox: BoundingBox| DetectionRecord {
        image_id: spec.image_id.clone(),
        detection: Detection::new(landmark, bbox, 1.0).expect("confidence 1 is valid"),
    };
    let detections = vec![
        mk_detection(Landmark::Carina, carina_box),
        mk_detection(Landmark::LeftHilum, hilum_box),
    ];

    let rale = Region::ALL
        .iter()
        .map(|&region| {
            let s = spec.scores_for(region);
            RaleRecord::new(spec.image_id.clone(), region, s.extent, s.density)
                .expect("scores validated")
        })
        .collect();

    Ok(PhantomTruth { image, lung_mask, region_mask, detections, rale })
}

/// Add `density * step` to a patch covering extent/4 of each region's area,
/// filled from the region's bottom row upward (basilar predominance).
fn paint_opacity_patches(
    spec: &PhantomSpec,
    region_mask: &RegionMask,
    pixels: &mut [f64],
) -> Result<(), SynthError> {
    let (w, h) = region_mask.dimensions();
    let step = spec.density_step();
    for region in Region::ALL {
        let scores = spec.scores_for(region);
        if scores.extent == 0 {
            continue;
        }
        let code = region.code();
        let area = region_mask.labels().iter().filter(|&&l| l == code).count() as u64;
        let target = round_half_up(f64::from(scores.extent) / 4.0 * area as f64).max(0) as u64;
        if target == 0 {
            return Err(SynthError::RegionTooSmall { region, extent: scores.extent, area });
        }
        let boost = f64::from(scores.density) * step;
        let mut remaining = target;
        'rows: for y in (0..h).rev() {
            for x in 0..w {
                if region_mask.get(x, y) == code {
                    pixels[y as usize * w as usize + x as usize] += boost;
                    remaining -= 1;
                    if remaining == 0 {
                        break 'rows;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Produce `n` candidate masks for the ensemble: copies of the true lung
/// mask, each independently perturbed. Boundary pixels flip with probability
/// `corruption`; additionally `corruption`% of one percent of all pixels get
/// speckle flips at distinct random positions. Rate 0 yields exact copies.
pub fn generate_candidate_masks(
    truth: &PhantomTruth,
    n: usize,
    corruption: f64,
    seed: u64,
) -> Result<Vec<BinaryMask>, SynthError> {
    if n < 1 {
        return Err(SynthError::InvalidSpec("candidate count must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&corruption) {
        return Err(SynthError::InvalidSpec(format!("corruption rate {corruption} outside [0, 1)")));
    }
    let base = &truth.lung_mask;
    let (w, h) = base.dimensions();
    let (wi, hi) = (w as usize, h as usize);

    let mut boundary: Vec<usize> = Vec::new();
    for y in 0..hi {
        for x in 0..wi {
            let v = base.bits()[y * wi + x];
            let mut edge = false;
            'scan: for ny in y.saturating_sub(1)..=(y + 1).min(hi - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(wi - 1) {
                    if base.bits()[ny * wi + nx] != v {
                        edge = true;
                        break 'scan;
                    }
                }
            }
            if edge {
                boundary.push(y * wi + x);
            }
        }
    }

    let speckle_count = (corruption * 0.01 * (wi * hi) as f64).floor() as usize;
    let mut masks = Vec::with_capacity(n);
    for k in 0..n {
        if corruption == 0.0 {
            masks.push(base.clone());
            continue;
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut bits = base.bits().to_vec();
        for &idx in &boundary {
            if rng.random_bool(corruption) {
                bits[idx] = !bits[idx];
            }
        }
        for idx in sample_indices(&mut rng, wi * hi, speckle_count.min(wi * hi)) {
            bits[idx] = !bits[idx];
        }
        masks.push(BinaryMask::new(w, h, bits).expect("dimensions preserved"));
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;
    use crate::quantify::normalize_and_quantify;

    fn spec_with(scores: [RegionScores; 4], noise_sigma: f64, seed: u64) -> PhantomSpec {
        PhantomSpec { scores, noise_sigma, seed, ..Default::default() }
    }

    #[test]
    fn quiet_phantom_has_closed_form_region_means() {
        let truth = generate_phantom(&PhantomSpec::default()).unwrap();
        let stats = normalize_and_quantify(&truth.image, &truth.lung_mask, &truth.region_mask, "p", 0).unwrap();
        assert_eq!(stats.background_mean, 180.0);
        for (region, stat) in stats.iter() {
            assert!(stat.area_px > 0, "{region} must be non-empty");
            let mean = stat.mean_normalized_intensity.unwrap();
            assert!((mean - (60.0 - 180.0)).abs() < 1e-9, "{region}: {mean}");
        }
    }

    #[test]
    fn density_raises_the_region_mean_at_equal_extent() {
        let mut low = [RegionScores::default(); 4];
        low[0] = RegionScores { extent: 2, density: 0 };
        let mut high = low;
        high[0] = RegionScores { extent: 2, density: 3 };
        let quiet = generate_phantom(&spec_with(low, 0.0, 1)).unwrap();
        let dense = generate_phantom(&spec_with(high, 0.0, 1)).unwrap();
        let mean = |t: &PhantomTruth| {
            normalize_and_quantify(&t.image, &t.lung_mask, &t.region_mask, "p", 0)
                .unwrap()
                .get(Region::RightUpper)
                .mean_normalized_intensity
                .unwrap()
        };
        assert!(mean(&dense) > mean(&quiet));
        // extent 2 of step 40 at density 3: (1/2) * 3 * 40 = 60 above baseline
        assert!((mean(&dense) - (60.0 - 180.0 + 60.0)).abs() < 0.51, "{}", mean(&dense));
    }

    #[test]
    fn same_spec_and_seed_is_bit_identical() {
        let spec = spec_with(severity_scores(4), 3.0, 99);
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a.image.pixels(), b.image.pixels());
        assert_eq!(a.lung_mask, b.lung_mask);
        assert_eq!(a.region_mask, b.region_mask);
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.rale, b.rale);
        // a different seed moves at least some noise
        let c = generate_phantom(&PhantomSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a.image.pixels(), c.image.pixels());
    }

    #[test]
    fn hilum_center_sits_the_physical_offset_below_the_carina_center() {
        for spacing in [0.2, 0.25] {
            let spec = PhantomSpec { spacing_mm: spacing, ..Default::default() };
            let truth = generate_phantom(&spec).unwrap();
            let boxes = truth.ground_truth_boxes();
            let carina = boxes.iter().find(|b| b.landmark == Landmark::Carina).unwrap();
            let hilum = boxes.iter().find(|b| b.landmark == Landmark::LeftHilum).unwrap();
            let expected = (DEFAULT_CARINA_OFFSET_MM / spacing + 0.5).floor() as i64;
            assert_eq!(hilum.bbox.center().y - carina.bbox.center().y, expected);
        }
    }

    #[test]
    fn region_mask_partitions_lung_mask() {
        let truth = generate_phantom(&spec_with(severity_scores(3), 0.0, 5)).unwrap();
        for (index, &label) in truth.region_mask.labels().iter().enumerate() {
            assert_eq!(label > 0, truth.lung_mask.bits()[index]);
        }
    }

    #[test]
    fn rale_records_echo_the_spec() {
        let scores = [
            RegionScores { extent: 1, density: 1 },
            RegionScores { extent: 2, density: 0 },
            RegionScores { extent: 0, density: 0 },
            RegionScores { extent: 4, density: 3 },
        ];
        let truth = generate_phantom(&spec_with(scores, 0.0, 2)).unwrap();
        assert_eq!(truth.rale.len(), 4);
        for (record, expected) in truth.rale.iter().zip(scores) {
            assert_eq!((record.extent, record.density), (expected.extent, expected.density));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let small = PhantomSpec { width: 64, ..Default::default() };
        assert!(matches!(generate_phantom(&small), Err(SynthError::InvalidSpec(_))));
        let inverted = PhantomSpec { baseline_body: 10.0, baseline_lung: 60.0, ..Default::default() };
        assert!(matches!(generate_phantom(&inverted), Err(SynthError::InvalidSpec(_))));
        let mut bad_scores = PhantomSpec::default();
        bad_scores.scores[1] = RegionScores { extent: 5, density: 0 };
        assert!(matches!(generate_phantom(&bad_scores), Err(SynthError::InvalidSpec(_))));
        // 20 mm at 0.002 mm/px is a 10000 px offset: hilum cannot fit
        let coarse = PhantomSpec { spacing_mm: 0.002, ..Default::default() };
        assert!(matches!(generate_phantom(&coarse), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn zero_corruption_returns_exact_copies() {
        let truth = generate_phantom(&PhantomSpec::default()).unwrap();
        let masks = generate_candidate_masks(&truth, 5, 0.0, 7).unwrap();
        assert_eq!(masks.len(), 5);
        for m in &masks {
            assert_eq!(m, &truth.lung_mask);
        }
    }

    #[test]
    fn corrupted_masks_differ_but_majority_recovers_truth() {
        let truth = generate_phantom(&PhantomSpec::default()).unwrap();
        let corrupted = generate_candidate_masks(&truth, 2, 0.3, 11).unwrap();
        let mut masks = vec![truth.lung_mask.clone(); 3];
        masks.extend(corrupted.iter().cloned());
        for m in &corrupted {
            assert!(dice(m, &truth.lung_mask).unwrap() < 1.0);
        }
        let fused = crate::ensemble::majority_vote(&masks).unwrap();
        assert_eq!(fused, truth.lung_mask);
    }

    #[test]
    fn corruption_rate_degrades_dice_monotonically_in_expectation() {
        let truth = generate_phantom(&PhantomSpec::default()).unwrap();
        let mean_dice = |rate: f64| {
            let mut total = 0.0;
            for seed in 0..20u64 {
                let masks = generate_candidate_masks(&truth, 1, rate, seed).unwrap();
                total += dice(&masks[0], &truth.lung_mask).unwrap();
            }
            total / 20.0
        };
        let d_light = mean_dice(0.1);
        let d_heavy = mean_dice(0.4);
        assert!(d_light > d_heavy, "{d_light} vs {d_heavy}");
        assert!(d_heavy < 1.0);
    }

    #[test]
    fn candidate_mask_parameters_are_validated() {
        let truth = generate_phantom(&PhantomSpec::default()).unwrap();
        assert!(generate_candidate_masks(&truth, 0, 0.1, 1).is_err());
        assert!(generate_candidate_masks(&truth, 3, 1.0, 1).is_err());
        assert!(generate_candidate_masks(&truth, 3, -0.1, 1).is_err());
    }

    #[test]
    fn severity_ladder_is_monotone_and_covers_both_ranges() {
        for pair in SEVERITY_LADDER.windows(2) {
            assert!(pair[1].0 >= pair[0].0 && pair[1].1 >= pair[0].1);
            assert!(pair[1] != pair[0]);
        }
        assert_eq!(SEVERITY_LADDER.iter().map(|&(e, _)| e).max(), Some(4));
        assert_eq!(SEVERITY_LADDER.iter().map(|&(_, d)| d).max(), Some(3));
        assert_eq!(severity_scores(1)[2], RegionScores { extent: 1, density: 1 });
    }
}
