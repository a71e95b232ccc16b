//! Bit-exact image and mask file I/O.
//!
//! Two formats are supported: binary portable-graymap (P5) and grayscale
//! portable-network-graphics, both 8- and 16-bit. Intensities are read as
//! stored, never rescaled. Format is sniffed from magic bytes on read and
//! picked from the file extension on write.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use super::{BinaryMask, GrayImage, RasterError, RegionMask};

/// Documented fallback when neither a sidecar nor an explicit spacing is
/// given: 0.2 mm/pixel, a typical CXR detector pitch. Callers should warn
/// when this is used, since the carina offset rule depends on physical scale.
pub const DEFAULT_SPACING_MM: f64 = 0.2;

/// Where a resolved pixel spacing came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingSource {
    Sidecar,
    Explicit,
    Default,
}

impl std::fmt::Display for SpacingSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpacingSource::Sidecar => "sidecar",
            SpacingSource::Explicit => "explicit",
            SpacingSource::Default => "default",
        })
    }
}

fn io_err(path: &Path, source: std::io::Error) -> RasterError {
    RasterError::Io { path: path.display().to_string(), source }
}

fn decode_err(path: &Path, reason: impl Into<String>) -> RasterError {
    RasterError::Decode { path: path.display().to_string(), reason: reason.into() }
}

/// Load an 8/16-bit grayscale image and attach the given spacing.
pub fn load_image(path: &Path, spacing_mm: f64) -> Result<GrayImage, RasterError> {
    let (width, height, samples) = load_gray_samples(path)?;
    let pixels = samples.into_iter().map(f64::from).collect();
    GrayImage::new(width, height, pixels, spacing_mm)
}

/// Load an image, resolving spacing as sidecar > explicit > documented default.
pub fn load_image_auto(
    path: &Path,
    explicit_spacing_mm: Option<f64>,
) -> Result<(GrayImage, SpacingSource), RasterError> {
    let (spacing, source) = match read_sidecar_spacing(path)? {
        Some(s) => (s, SpacingSource::Sidecar),
        None => match explicit_spacing_mm {
            Some(s) => (s, SpacingSource::Explicit),
            None => (DEFAULT_SPACING_MM, SpacingSource::Default),
        },
    };
    Ok((load_image(path, spacing)?, source))
}

/// Read the optional `<image>.meta` sidecar next to an image.
///
/// The sidecar is the image filename with `.meta` appended and must contain
/// a `spacing_mm=<real>` line. Returns `Ok(None)` when no sidecar exists.
pub fn read_sidecar_spacing(image_path: &Path) -> Result<Option<f64>, RasterError> {
    let mut name = image_path.as_os_str().to_os_string();
    name.push(".meta");
    let sidecar = Path::new(&name);
    if !sidecar.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(sidecar).map_err(|e| io_err(sidecar, e))?;
    for line in text.lines() {
        if let Some(raw) = line.trim().strip_prefix("spacing_mm=") {
            let value: f64 = raw
                .trim()
                .parse()
                .map_err(|_| RasterError::BadSidecar { path: sidecar.display().to_string() })?;
            if !(value > 0.0) {
                return Err(RasterError::NonPositiveSpacing(value));
            }
            return Ok(Some(value));
        }
    }
    Err(RasterError::BadSidecar { path: sidecar.display().to_string() })
}

/// Save a grayscale image. Pixels must be integers in 0..=65535; the file is
/// written 8-bit when every value fits in 0..=255 and 16-bit otherwise.
pub fn save_image(image: &GrayImage, path: &Path) -> Result<(), RasterError> {
    let mut samples = Vec::with_capacity(image.pixels().len());
    for (index, &value) in image.pixels().iter().enumerate() {
        if value.fract() != 0.0 || !(0.0..=65535.0).contains(&value) {
            return Err(RasterError::UnencodablePixel { index, value });
        }
        samples.push(value as u16);
    }
    save_gray_samples(path, image.width(), image.height(), &samples)
}

/// Load a binary mask: any stored value > 0 reads as true.
pub fn load_mask(path: &Path) -> Result<BinaryMask, RasterError> {
    let (width, height, samples) = load_gray_samples(path)?;
    let bits = samples.into_iter().map(|v| v > 0).collect();
    BinaryMask::new(width, height, bits)
}

/// Save a binary mask as an 8-bit file with values {0, 255}.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<(), RasterError> {
    let samples: Vec<u16> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    save_gray_samples(path, mask.width(), mask.height(), &samples)
}

/// Save a region mask as an 8-bit file carrying the raw label codes 0..=4.
pub fn save_region_mask(mask: &RegionMask, path: &Path) -> Result<(), RasterError> {
    let samples: Vec<u16> = mask.labels().iter().map(|&l| u16::from(l)).collect();
    save_gray_samples(path, mask.width(), mask.height(), &samples)
}

/// Load a region mask written by [`save_region_mask`]; labels are validated.
pub fn load_region_mask(path: &Path) -> Result<RegionMask, RasterError> {
    let (width, height, samples) = load_gray_samples(path)?;
    let mut labels = Vec::with_capacity(samples.len());
    for (index, value) in samples.into_iter().enumerate() {
        if value > 4 {
            return Err(RasterError::InvalidLabel { index, value: value.min(255) as u8 });
        }
        labels.push(value as u8);
    }
    RegionMask::new(width, height, labels)
}

fn load_gray_samples(path: &Path) -> Result<(u32, u32, Vec<u16>), RasterError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    match bytes.first() {
        Some(0x89) => decode_png(path, &bytes),
        Some(b'P') => decode_pnm(path, &bytes),
        _ => Err(RasterError::UnsupportedFormat { path: path.display().to_string() }),
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<(u32, u32, Vec<u16>), RasterError> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e.to_string()))?;
    let (w, h) = (decoded.width(), decoded.height());
    let samples = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        _ => return Err(RasterError::ColorImage { path: path.display().to_string() }),
    };
    Ok((w, h, samples))
}

fn decode_pnm(path: &Path, bytes: &[u8]) -> Result<(u32, u32, Vec<u16>), RasterError> {
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some(b"P6") => return Err(RasterError::ColorImage { path: path.display().to_string() }),
        _ => return Err(RasterError::UnsupportedFormat { path: path.display().to_string() }),
    }

    let mut pos = 2usize;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        *field = read_pnm_field(path, bytes, &mut pos)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if !(1..=65535).contains(&maxval) {
        return Err(decode_err(path, format!("PGM maxval {maxval} outside 1..=65535")));
    }
    if width > u64::from(u32::MAX) || height > u64::from(u32::MAX) {
        return Err(decode_err(path, "PGM dimensions overflow u32"));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(decode_err(path, "missing whitespace after PGM maxval")),
    }

    let count = width as usize * height as usize;
    let data = &bytes[pos..];
    let samples = if maxval < 256 {
        if data.len() < count {
            return Err(decode_err(path, "PGM raster truncated"));
        }
        data[..count].iter().map(|&b| u16::from(b)).collect()
    } else {
        if data.len() < 2 * count {
            return Err(decode_err(path, "PGM raster truncated"));
        }
        data[..2 * count]
            .chunks_exact(2)
            .map(|pair| u16::from_be_bytes([pair[0], pair[1]]))
            .collect()
    };
    Ok((width as u32, height as u32, samples))
}

/// Read one header integer, skipping whitespace and `#` comments.
fn read_pnm_field(path: &Path, bytes: &[u8], pos: &mut usize) -> Result<u64, RasterError> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_digit() => break,
            _ => return Err(decode_err(path, "malformed PGM header")),
        }
    }
    let mut value: u64 = 0;
    while let Some(&b) = bytes.get(*pos) {
        if !b.is_ascii_digit() {
            break;
        }
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add(u64::from(b - b'0')))
            .ok_or_else(|| decode_err(path, "PGM header value overflow"))?;
        *pos += 1;
    }
    Ok(value)
}

fn save_gray_samples(path: &Path, width: u32, height: u32, samples: &[u16]) -> Result<(), RasterError> {
    let wide = samples.iter().any(|&s| s > 255);
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => {
            let out = if wide {
                DynamicImage::ImageLuma16(
                    ImageBuffer::<Luma<u16>, _>::from_raw(width, height, samples.to_vec())
                        .expect("sample count matches dimensions"),
                )
            } else {
                DynamicImage::ImageLuma8(
                    ImageBuffer::<Luma<u8>, _>::from_raw(
                        width,
                        height,
                        samples.iter().map(|&s| s as u8).collect(),
                    )
                    .expect("sample count matches dimensions"),
                )
            };
            out.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| decode_err(path, e.to_string()))
        }
        "pgm" | "pnm" => {
            let maxval: u32 = if wide { 65535 } else { 255 };
            let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
            write!(file, "P5\n{width} {height}\n{maxval}\n").map_err(|e| io_err(path, e))?;
            if wide {
                let mut raw = Vec::with_capacity(samples.len() * 2);
                for &s in samples {
                    raw.extend_from_slice(&s.to_be_bytes());
                }
                file.write_all(&raw).map_err(|e| io_err(path, e))?;
            } else {
                let raw: Vec<u8> = samples.iter().map(|&s| s as u8).collect();
                file.write_all(&raw).map_err(|e| io_err(path, e))?;
            }
            Ok(())
        }
        _ => Err(RasterError::UnsupportedFormat { path: path.display().to_string() }),
    }
}
