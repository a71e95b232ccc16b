//! Background-relative intensity normalization and per-region means.
//!
//! Different devices and exposure settings shift CXR brightness wholesale, so
//! raw lung means are not comparable between images. Every pixel inside the
//! lung is normalized by subtracting the mean intensity outside the lung
//! regions, and the normalized pixels are averaged per region. Constant
//! brightness offsets cancel exactly.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::KahanSum;
use crate::raster::{BinaryMask, GrayImage, Region, RegionMask};

#[derive(Debug, Error)]
pub enum QuantifyError {
    #[error("image is {image_w}x{image_h} but masks are {mask_w}x{mask_h}")]
    DimensionMismatch { image_w: u32, image_h: u32, mask_w: u32, mask_h: u32 },
    #[error("lung mask covers every usable pixel, background mean is undefined")]
    EmptyBackground,
    #[error("region label at pixel index {index} lies outside the lung mask")]
    LabelOutsideLung { index: usize },
    #[error("crop border {crop} px leaves no pixels on a {width}x{height} raster")]
    CropTooLarge { crop: u32, width: u32, height: u32 },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("CSV row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// Statistics for one region of one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionStat {
    pub area_px: u64,
    /// Mean of (pixel - background mean) over the region; absent when the
    /// region is empty, since zero is a meaningful value.
    pub mean_normalized_intensity: Option<f64>,
}

/// Per-image quantification result over the four regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub image_id: String,
    pub background_mean: f64,
    stats: [RegionStat; 4],
}

impl RegionStats {
    pub fn new(image_id: String, background_mean: f64, stats: [RegionStat; 4]) -> Self {
        Self { image_id, background_mean, stats }
    }

    pub fn get(&self, region: Region) -> RegionStat {
        self.stats[region.code() as usize - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Region, RegionStat)> + '_ {
        Region::ALL.iter().map(|&r| (r, self.get(r)))
    }
}

/// Compute the background mean and the four normalized region means.
///
/// Background is every non-lung pixel of the raster (the literal reading:
/// cardiomediastinum and collimation borders included); `crop_border` shrinks
/// the raster window by that many pixels on each side before the background
/// mean is taken, for images with burned-in collimation margins.
pub fn normalize_and_quantify(
    image: &GrayImage,
    lung: &BinaryMask,
    regions: &RegionMask,
    image_id: &str,
    crop_border: u32,
) -> Result<RegionStats, QuantifyError> {
    let (w, h) = image.dimensions();
    if lung.dimensions() != (w, h) || regions.dimensions() != (w, h) {
        return Err(QuantifyError::DimensionMismatch {
            image_w: w,
            image_h: h,
            mask_w: lung.width(),
            mask_h: lung.height(),
        });
    }
    if 2 * crop_border >= w || 2 * crop_border >= h {
        return Err(QuantifyError::CropTooLarge { crop: crop_border, width: w, height: h });
    }

    let wi = w as usize;
    let crop = crop_border as usize;
    let mut background = KahanSum::default();
    let mut background_count = 0u64;
    for y in crop..h as usize - crop {
        for x in crop..wi - crop {
            let index = y * wi + x;
            if !lung.bits()[index] {
                background.add(image.pixels()[index]);
                background_count += 1;
            }
        }
    }
    if background_count == 0 {
        return Err(QuantifyError::EmptyBackground);
    }
    let background_mean = background.value() / background_count as f64;

    let mut sums = [KahanSum::default(); 4];
    let mut counts = [0u64; 4];
    for (index, &label) in regions.labels().iter().enumerate() {
        if label == 0 {
            continue;
        }
        if !lung.bits()[index] {
            return Err(QuantifyError::LabelOutsideLung { index });
        }
        sums[label as usize - 1].add(image.pixels()[index] - background_mean);
        counts[label as usize - 1] += 1;
    }

    let stats = std::array::from_fn(|i| RegionStat {
        area_px: counts[i],
        mean_normalized_intensity: (counts[i] > 0).then(|| sums[i].value() / counts[i] as f64),
    });
    Ok(RegionStats::new(image_id.to_owned(), background_mean, stats))
}

/// Write stats as CSV rows `image_id,region,area_px,mean_normalized_intensity,background_mean`.
/// The mean field is empty for empty regions.
pub fn write_region_stats_csv<W: io::Write>(writer: W, stats: &[RegionStats]) -> Result<(), QuantifyError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["image_id", "region", "area_px", "mean_normalized_intensity", "background_mean"])?;
    for s in stats {
        for (region, stat) in s.iter() {
            out.write_record([
                s.image_id.as_str(),
                region.abbrev(),
                &stat.area_px.to_string(),
                &stat.mean_normalized_intensity.map(|m| m.to_string()).unwrap_or_default(),
                &s.background_mean.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read stats written by [`write_region_stats_csv`]. Rows of one image may be
/// scattered; they are collected by id in first-appearance order.
pub fn read_region_stats_csv<R: io::Read>(reader: R) -> Result<Vec<RegionStats>, QuantifyError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut by_id: std::collections::HashMap<String, (f64, [Option<RegionStat>; 4])> =
        std::collections::HashMap::new();

    for (row, record) in csv_reader.records().enumerate() {
        let record = record?;
        let bad = |reason: &str| QuantifyError::BadRow { row: row + 2, reason: reason.to_owned() };
        let image_id = record.get(0).ok_or_else(|| bad("missing image_id"))?.to_owned();
        let region = record
            .get(1)
            .and_then(Region::parse_abbrev)
            .ok_or_else(|| bad("unknown region"))?;
        let area_px: u64 = record
            .get(2)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad area_px"))?;
        let mean_field = record.get(3).unwrap_or_default();
        let mean = if mean_field.is_empty() {
            None
        } else {
            Some(mean_field.parse::<f64>().map_err(|_| bad("bad mean"))?)
        };
        let background: f64 = record
            .get(4)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad background_mean"))?;
        if mean.is_none() && area_px > 0 {
            return Err(bad("non-empty region with missing mean"));
        }

        let entry = by_id.entry(image_id.clone()).or_insert_with(|| {
            order.push(image_id.clone());
            (background, [None; 4])
        });
        entry.1[region.code() as usize - 1] = Some(RegionStat { area_px, mean_normalized_intensity: mean });
    }

    let mut result = Vec::with_capacity(order.len());
    for id in order {
        let (background, slots) = by_id.remove(&id).expect("inserted above");
        let stats = std::array::from_fn(|i| {
            slots[i].unwrap_or(RegionStat { area_px: 0, mean_normalized_intensity: None })
        });
        result.push(RegionStats::new(id, background, stats));
    }
    Ok(result)
}
