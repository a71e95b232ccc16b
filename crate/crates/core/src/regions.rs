//! Four-region partition of the lungs around a reference row.
//!
//! Rows strictly above the reference belong to the upper regions; the
//! reference row itself and everything below it is lower. Label codes are
//! fixed: 1 = RUR, 2 = RLR, 3 = LUR, 4 = LLR, 0 = background.

use thiserror::Error;

use crate::raster::{BinaryMask, Point, Region, RegionMask};

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("right mask is {right_w}x{right_h} but left mask is {left_w}x{left_h}")]
    DimensionMismatch { right_w: u32, right_h: u32, left_w: u32, left_h: u32 },
    #[error("right and left masks overlap at pixel index {index}")]
    OverlappingMasks { index: usize },
    #[error("reference row {y} falls outside image rows 0..{height}")]
    ReferenceRowOutOfBounds { y: i64, height: u32 },
}

/// Label each lung pixel by side and by its row relative to the reference.
pub fn split_four_regions(
    right_lung: &BinaryMask,
    left_lung: &BinaryMask,
    reference: Point,
) -> Result<RegionMask, RegionError> {
    let (w, h) = right_lung.dimensions();
    if left_lung.dimensions() != (w, h) {
        return Err(RegionError::DimensionMismatch {
            right_w: w,
            right_h: h,
            left_w: left_lung.width(),
            left_h: left_lung.height(),
        });
    }
    if reference.y < 0 || reference.y >= i64::from(h) {
        return Err(RegionError::ReferenceRowOutOfBounds { y: reference.y, height: h });
    }

    let wi = w as usize;
    let mut labels = vec![0u8; wi * h as usize];
    for (index, label) in labels.iter_mut().enumerate() {
        let right = right_lung.bits()[index];
        let left = left_lung.bits()[index];
        if right && left {
            return Err(RegionError::OverlappingMasks { index });
        }
        let upper = ((index / wi) as i64) < reference.y;
        *label = match (right, left, upper) {
            (true, _, true) => Region::RightUpper.code(),
            (true, _, false) => Region::RightLower.code(),
            (_, true, true) => Region::LeftUpper.code(),
            (_, true, false) => Region::LeftLower.code(),
            _ => 0,
        };
    }
    Ok(RegionMask::new(w, h, labels).expect("labels constructed in range"))
}

/// Pixel counts and physical areas per region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionAreas {
    counts: [u64; 4],
    background: u64,
    spacing_mm: f64,
}

impl RegionAreas {
    pub fn pixels(&self, region: Region) -> u64 {
        self.counts[region.code() as usize - 1]
    }

    pub fn area_mm2(&self, region: Region) -> f64 {
        self.pixels(region) as f64 * self.spacing_mm * self.spacing_mm
    }

    pub fn background_pixels(&self) -> u64 {
        self.background
    }

    /// Total lung pixels, i.e. the sum over labels 1..=4.
    pub fn lung_pixels(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn region_areas(mask: &RegionMask, spacing_mm: f64) -> RegionAreas {
    let mut counts = [0u64; 4];
    let mut background = 0u64;
    for &label in mask.labels() {
        match label {
            0 => background += 1,
            l => counts[l as usize - 1] += 1,
        }
    }
    RegionAreas { counts, background, spacing_mm }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_rectangles() -> (BinaryMask, BinaryMask) {
        // 10x20 rectangles on a 64x40 raster
        let right = BinaryMask::from_fn(64, 40, |x, y| (8..18).contains(&x) && (10..30).contains(&y));
        let left = BinaryMask::from_fn(64, 40, |x, y| (40..50).contains(&x) && (10..30).contains(&y));
        (right, left)
    }

    #[test]
    fn midline_reference_splits_rectangles_in_half() {
        let (right, left) = two_rectangles();
        let mask = split_four_regions(&right, &left, Point::new(13, 20)).unwrap();
        let areas = region_areas(&mask, 0.2);
        for region in Region::ALL {
            assert_eq!(areas.pixels(region), 100, "{region}");
        }
        assert!((areas.area_mm2(Region::RightUpper) - 4.0).abs() < 1e-12);
        assert_eq!(areas.lung_pixels(), 400);
    }

    #[test]
    fn reference_row_zero_leaves_no_upper_pixels() {
        let (right, left) = two_rectangles();
        let mask = split_four_regions(&right, &left, Point::new(13, 0)).unwrap();
        let areas = region_areas(&mask, 0.2);
        assert_eq!(areas.pixels(Region::RightUpper), 0);
        assert_eq!(areas.pixels(Region::LeftUpper), 0);
        assert_eq!(areas.pixels(Region::RightLower), 200);
        assert_eq!(areas.pixels(Region::LeftLower), 200);
    }

    #[test]
    fn boundary_row_belongs_to_lower_regions() {
        let (right, left) = two_rectangles();
        let mask = split_four_regions(&right, &left, Point::new(13, 15)).unwrap();
        for x in 8..18 {
            assert_eq!(mask.region_at(x, 15), Some(Region::RightLower));
            assert_eq!(mask.region_at(x, 14), Some(Region::RightUpper));
        }
    }

    #[test]
    fn empty_lungs_give_all_background() {
        let empty = BinaryMask::filled(16, 16, false);
        let mask = split_four_regions(&empty, &empty, Point::new(8, 8)).unwrap();
        assert!(mask.labels().iter().all(|&l| l == 0));
        let areas = region_areas(&mask, 1.0);
        assert_eq!(areas.lung_pixels(), 0);
        assert_eq!(areas.background_pixels(), 256);
        for region in Region::ALL {
            assert_eq!(areas.pixels(region), 0);
        }
    }

    #[test]
    fn overlapping_masks_are_rejected() {
        let a = BinaryMask::filled(4, 4, true);
        let err = split_four_regions(&a, &a, Point::new(2, 2));
        assert!(matches!(err, Err(RegionError::OverlappingMasks { index: 0 })));
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let a = BinaryMask::filled(4, 4, false);
        let b = BinaryMask::filled(5, 4, false);
        assert!(matches!(split_four_regions(&a, &b, Point::new(0, 0)), Err(RegionError::DimensionMismatch { .. })));
    }

    #[test]
    fn out_of_bounds_reference_row_is_rejected() {
        let (right, left) = two_rectangles();
        assert!(matches!(
            split_four_regions(&right, &left, Point::new(13, 40)),
            Err(RegionError::ReferenceRowOutOfBounds { y: 40, height: 40 })
        ));
        assert!(matches!(
            split_four_regions(&right, &left, Point::new(13, -1)),
            Err(RegionError::ReferenceRowOutOfBounds { y: -1, .. })
        ));
    }

    fn random_disjoint_masks(seed: u64, w: u32, h: u32) -> (BinaryMask, BinaryMask) {
        let mut state = seed | 1;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 61) & 0b11
        };
        let mut right = BinaryMask::filled(w, h, false);
        let mut left = BinaryMask::filled(w, h, false);
        for y in 0..h {
            for x in 0..w {
                match next() {
                    1 => right.set(x, y, true),
                    2 => left.set(x, y, true),
                    _ => {}
                }
            }
        }
        (right, left)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn labels_partition_lungs_and_respect_the_reference_row(seed in any::<u64>(), ref_y in 0i64..12) {
            let (right, left) = random_disjoint_masks(seed, 10, 12);
            let mask = split_four_regions(&right, &left, Point::new(5, ref_y)).unwrap();
            for y in 0..12u32 {
                for x in 0..10u32 {
                    let label = mask.region_at(x, y);
                    match label {
                        Some(Region::RightUpper) | Some(Region::RightLower) => prop_assert!(right.get(x, y)),
                        Some(Region::LeftUpper) | Some(Region::LeftLower) => prop_assert!(left.get(x, y)),
                        None => prop_assert!(!right.get(x, y) && !left.get(x, y)),
                    }
                    match label {
                        Some(Region::RightUpper) | Some(Region::LeftUpper) => prop_assert!((y as i64) < ref_y),
                        Some(Region::RightLower) | Some(Region::LeftLower) => prop_assert!((y as i64) >= ref_y),
                        None => {}
                    }
                }
            }
            let areas = region_areas(&mask, 1.0);
            prop_assert_eq!(areas.lung_pixels() as usize, right.count_true() + left.count_true());
        }

        // translating masks and reference down by k rows translates the labels
        #[test]
        fn vertical_translation_equivariance(seed in any::<u64>(), ref_y in 0i64..6, k in 1u32..4) {
            let (right, left) = random_disjoint_masks(seed, 8, 6);
            let base = split_four_regions(&right, &left, Point::new(4, ref_y)).unwrap();
            let h = 6 + k;
            let shift = |m: &BinaryMask| BinaryMask::from_fn(8, h, |x, y| y >= k && m.get(x, y - k));
            let shifted = split_four_regions(&shift(&right), &shift(&left), Point::new(4, ref_y + i64::from(k))).unwrap();
            for y in 0..6u32 {
                for x in 0..8u32 {
                    prop_assert_eq!(base.get(x, y), shifted.get(x, y + k));
                }
            }
            for y in 0..k {
                for x in 0..8u32 {
                    prop_assert_eq!(shifted.get(x, y), 0);
                }
            }
        }
    }
}
