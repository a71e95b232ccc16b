//! Core raster types shared by every pipeline stage.
//!
//! All types are immutable after construction and safe to share read-only
//! across parallel workers. Pixel data is row-major; `(x, y)` is
//! `(column, row)` with rows growing downward.

mod io;

pub use io::{
    load_image, load_image_auto, load_mask, load_region_mask, read_sidecar_spacing, save_image,
    save_mask, save_region_mask, SpacingSource, DEFAULT_SPACING_MM,
};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::numeric::round_half_up;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("pixel buffer length {got} does not match {width}x{height}")]
    PixelCountMismatch { width: u32, height: u32, got: usize },
    #[error("pixel spacing must be positive, got {0} mm")]
    NonPositiveSpacing(f64),
    #[error("intensity at index {index} is {value}, must be finite and non-negative")]
    InvalidIntensity { index: usize, value: f64 },
    #[error("label {value} at index {index} is outside 0..=4")]
    InvalidLabel { index: usize, value: u8 },
    #[error("invalid box [{x_min}, {y_min}, {x_max}, {y_max}]: min must be strictly below max")]
    InvalidBox { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Decode { path: String, reason: String },
    #[error("{path}: color images are not supported, expected 8/16-bit grayscale")]
    ColorImage { path: String },
    #[error("{path}: unsupported image format (expected binary PGM or grayscale PNG)")]
    UnsupportedFormat { path: String },
    #[error("cannot save pixel value {value} at index {index}: must be an integer in 0..=65535")]
    UnencodablePixel { index: usize, value: f64 },
    #[error("{path}: malformed sidecar, expected a `spacing_mm=<value>` line")]
    BadSidecar { path: String },
}

/// 2D grayscale raster with physical pixel spacing.
///
/// Intensities are kept in stored units (no rescaling); the normalization
/// step subtracts a background mean, so absolute offsets cancel downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<f64>,
    spacing_mm: f64,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<f64>, spacing_mm: f64) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(RasterError::PixelCountMismatch { width, height, got: pixels.len() });
        }
        if !(spacing_mm > 0.0) {
            return Err(RasterError::NonPositiveSpacing(spacing_mm));
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(RasterError::InvalidIntensity { index, value });
        }
        Ok(Self { width, height, pixels, spacing_mm })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.pixels[self.index(x, y)]
    }

    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    /// Same raster with a different spacing attached.
    pub fn with_spacing(mut self, spacing_mm: f64) -> Result<Self, RasterError> {
        if !(spacing_mm > 0.0) {
            return Err(RasterError::NonPositiveSpacing(spacing_mm));
        }
        self.spacing_mm = spacing_mm;
        Ok(self)
    }
}

/// 2D boolean raster: one candidate or final lung segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        if bits.len() != (width as usize) * (height as usize) {
            return Err(RasterError::PixelCountMismatch { width, height, got: bits.len() });
        }
        Ok(Self { width, height, bits })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self { width, height, bits: vec![value; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = y as usize * self.width as usize + x as usize;
        self.bits[i] = value;
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }
}

/// Four-region lung labels. Codes are fixed in every output file:
/// 0 = background, 1 = RUR, 2 = RLR, 3 = LUR, 4 = LLR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "RUR")]
    RightUpper,
    #[serde(rename = "RLR")]
    RightLower,
    #[serde(rename = "LUR")]
    LeftUpper,
    #[serde(rename = "LLR")]
    LeftLower,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::RightUpper, Region::RightLower, Region::LeftUpper, Region::LeftLower];

    pub fn code(self) -> u8 {
        match self {
            Region::RightUpper => 1,
            Region::RightLower => 2,
            Region::LeftUpper => 3,
            Region::LeftLower => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Region> {
        match code {
            1 => Some(Region::RightUpper),
            2 => Some(Region::RightLower),
            3 => Some(Region::LeftUpper),
            4 => Some(Region::LeftLower),
            _ => None,
        }
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            Region::RightUpper => "RUR",
            Region::RightLower => "RLR",
            Region::LeftUpper => "LUR",
            Region::LeftLower => "LLR",
        }
    }

    pub fn parse_abbrev(s: &str) -> Option<Region> {
        match s {
            "RUR" => Some(Region::RightUpper),
            "RLR" => Some(Region::RightLower),
            "LUR" => Some(Region::LeftUpper),
            "LLR" => Some(Region::LeftLower),
            _ => None,
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.abbrev())
    }
}

/// 2D labeled raster over background plus the four lung regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl RegionMask {
    pub fn new(width: u32, height: u32, labels: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        if labels.len() != (width as usize) * (height as usize) {
            return Err(RasterError::PixelCountMismatch { width, height, got: labels.len() });
        }
        if let Some((index, &value)) = labels.iter().enumerate().find(|(_, v)| **v > 4) {
            return Err(RasterError::InvalidLabel { index, value });
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn region_at(&self, x: u32, y: u32) -> Option<Region> {
        Region::from_code(self.get(x, y))
    }
}

/// Integer pixel location, `(column, row)`.
///
/// Signed so that off-raster geometry (e.g. a reference point computed from a
/// detection box that overhangs the image) can be represented and rejected by
/// the consuming operation instead of wrapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box in pixel coordinates, `x_min < x_max`, `y_min < y_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, RasterError> {
        let ok = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) && x_min < x_max && y_min < y_max;
        if !ok {
            return Err(RasterError::InvalidBox { x_min, y_min, x_max, y_max });
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    /// Central point of the box, rounded half-up to integer pixels.
    pub fn center(&self) -> Point {
        Point::new(
            round_half_up((self.x_min + self.x_max) / 2.0),
            round_half_up((self.y_min + self.y_max) / 2.0),
        )
    }
}

// Boxes travel through files as `[x_min, y_min, x_max, y_max]`.
impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x_min, self.y_min, self.x_max, self.y_max].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x_min, y_min, x_max, y_max] = <[f64; 4]>::deserialize(deserializer)?;
        BoundingBox::new(x_min, y_min, x_max, y_max).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_image_rejects_bad_construction() {
        assert!(matches!(
            GrayImage::new(0, 4, vec![], 0.2),
            Err(RasterError::EmptyDimensions { .. })
        ));
        assert!(matches!(
            GrayImage::new(2, 2, vec![0.0; 3], 0.2),
            Err(RasterError::PixelCountMismatch { .. })
        ));
        assert!(matches!(
            GrayImage::new(2, 2, vec![0.0; 4], 0.0),
            Err(RasterError::NonPositiveSpacing(_))
        ));
        assert!(matches!(
            GrayImage::new(2, 2, vec![0.0, -1.0, 0.0, 0.0], 0.2),
            Err(RasterError::InvalidIntensity { index: 1, .. })
        ));
        assert!(matches!(
            GrayImage::new(2, 2, vec![0.0, f64::NAN, 0.0, 0.0], 0.2),
            Err(RasterError::InvalidIntensity { .. })
        ));
    }

    #[test]
    fn region_codes_round_trip() {
        for region in Region::ALL {
            assert_eq!(Region::from_code(region.code()), Some(region));
            assert_eq!(Region::parse_abbrev(region.abbrev()), Some(region));
        }
        assert_eq!(Region::from_code(0), None);
        assert_eq!(Region::from_code(5), None);
    }

    #[test]
    fn region_mask_rejects_out_of_range_labels() {
        assert!(matches!(
            RegionMask::new(2, 1, vec![0, 5]),
            Err(RasterError::InvalidLabel { index: 1, value: 5 })
        ));
    }

    #[test]
    fn box_center_rounds_half_up() {
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(b.center(), Point::new(5, 5));
        let b = BoundingBox::new(10.0, 20.0, 11.0, 21.0).unwrap();
        assert_eq!(b.center(), Point::new(11, 21));
    }

    #[test]
    fn box_rejects_degenerate_extents() {
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 2.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn bounding_box_serde_is_a_flat_array() {
        let b = BoundingBox::new(1.0, 2.0, 3.0, 4.0).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(json, "[1.0,2.0,3.0,4.0]");
        let back: BoundingBox = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
        assert!(serde_json::from_str::<BoundingBox>("[3.0,2.0,1.0,4.0]").is_err());
    }
}
