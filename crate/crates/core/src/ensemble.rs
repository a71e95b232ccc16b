//! Majority-vote fusion of candidate lung masks plus post-processing.
//!
//! A pixel is labeled lung when at least half of the candidate masks vote for
//! it (ties at even N count as lung). The fused mask is then refined: enclosed
//! holes are filled and all but the largest connected components are removed,
//! after which the two lungs are separated into right and left masks.

use thiserror::Error;

use crate::raster::BinaryMask;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("at least one candidate mask is required")]
    EmptyMaskSet,
    #[error("mask {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch { index: usize, got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
    #[error("mask has no connected components to split")]
    NoComponents,
    #[error("lungs are fused into one component and no fallback column was given")]
    FusedWithoutFallback,
    #[error("expected 1 or 2 connected components, found {0}; run isolated-region removal first")]
    TooManyComponents(usize),
}

/// Ensemble post-processing configuration. `keep_components` is the number of
/// connected components retained after hole filling (two lungs by default).
#[derive(Debug, Clone, Copy)]
pub struct EnsembleConfig {
    pub keep_components: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { keep_components: 2 }
    }
}

/// Pixelwise majority vote: output is true iff votes >= N/2.
pub fn majority_vote(masks: &[BinaryMask]) -> Result<BinaryMask, EnsembleError> {
    let first = masks.first().ok_or(EnsembleError::EmptyMaskSet)?;
    let (w, h) = first.dimensions();
    for (index, m) in masks.iter().enumerate() {
        if m.dimensions() != (w, h) {
            return Err(EnsembleError::DimensionMismatch {
                index,
                got_w: m.width(),
                got_h: m.height(),
                want_w: w,
                want_h: h,
            });
        }
    }
    let n = masks.len();
    let mut votes = vec![0u32; w as usize * h as usize];
    for m in masks {
        for (acc, &bit) in votes.iter_mut().zip(m.bits()) {
            *acc += u32::from(bit);
        }
    }
    // votes >= n/2 without leaving integer arithmetic
    let bits = votes.iter().map(|&v| 2 * v as usize >= n).collect();
    Ok(BinaryMask::new(w, h, bits).expect("dimensions from input"))
}

/// Fill every enclosed hole: a false region survives only if it touches the
/// raster border. Holes use 4-connectivity (the dual of the 8-connected
/// foreground, avoiding topological paradoxes).
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dimensions();
    let (wi, hi) = (w as usize, h as usize);
    let mut reachable = vec![false; wi * hi];
    let mut stack: Vec<usize> = Vec::new();

    let seed = |idx: usize, reachable: &mut Vec<bool>, stack: &mut Vec<usize>| {
        if !mask.bits()[idx] && !reachable[idx] {
            reachable[idx] = true;
            stack.push(idx);
        }
    };
    for x in 0..wi {
        seed(x, &mut reachable, &mut stack);
        seed((hi - 1) * wi + x, &mut reachable, &mut stack);
    }
    for y in 0..hi {
        seed(y * wi, &mut reachable, &mut stack);
        seed(y * wi + wi - 1, &mut reachable, &mut stack);
    }

    while let Some(idx) = stack.pop() {
        let (x, y) = (idx % wi, idx / wi);
        let mut visit = |nx: usize, ny: usize| {
            let nidx = ny * wi + nx;
            if !mask.bits()[nidx] && !reachable[nidx] {
                reachable[nidx] = true;
                stack.push(nidx);
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < wi {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < hi {
            visit(x, y + 1);
        }
    }

    let bits = mask
        .bits()
        .iter()
        .zip(&reachable)
        .map(|(&fg, &bg_reachable)| fg || !bg_reachable)
        .collect();
    BinaryMask::new(w, h, bits).expect("dimensions preserved")
}

/// Keep the `keep` largest 8-connected components; everything else is erased.
/// Area ties break toward the component whose first pixel (row-major) comes
/// first.
pub fn remove_isolated(mask: &BinaryMask, keep: usize) -> BinaryMask {
    assert!(keep >= 1, "keep must be at least 1");
    let labeled = label_components(mask);
    if labeled.components.len() <= keep {
        return mask.clone();
    }
    let mut order: Vec<usize> = (0..labeled.components.len()).collect();
    order.sort_by_key(|&i| {
        let c = &labeled.components[i];
        (std::cmp::Reverse(c.area), c.first_index)
    });
    let mut survives = vec![false; labeled.components.len() + 1];
    for &i in order.iter().take(keep) {
        survives[i + 1] = true;
    }
    let bits = labeled.labels.iter().map(|&l| l != 0 && survives[l as usize]).collect();
    BinaryMask::new(mask.width(), mask.height(), bits).expect("dimensions preserved")
}

/// Hole filling followed by isolated-region removal, in that order.
pub fn postprocess(mask: &BinaryMask, config: &EnsembleConfig) -> BinaryMask {
    remove_isolated(&fill_holes(mask), config.keep_components)
}

/// Separate a post-processed lung mask into (right lung, left lung).
///
/// With two components, the one whose centroid column is smaller is the right
/// lung: radiological convention puts the patient's right on the viewer's
/// left. With a single fused component, columns left of `fallback_column` go
/// to the right lung.
pub fn split_left_right(
    mask: &BinaryMask,
    fallback_column: Option<u32>,
) -> Result<(BinaryMask, BinaryMask), EnsembleError> {
    let labeled = label_components(mask);
    let (w, h) = mask.dimensions();
    match labeled.components.len() {
        0 => Err(EnsembleError::NoComponents),
        1 => {
            let split = fallback_column.ok_or(EnsembleError::FusedWithoutFallback)?;
            let right = BinaryMask::from_fn(w, h, |x, y| mask.get(x, y) && x < split);
            let left = BinaryMask::from_fn(w, h, |x, y| mask.get(x, y) && x >= split);
            Ok((right, left))
        }
        2 => {
            let c0 = &labeled.components[0];
            let c1 = &labeled.components[1];
            // centroid columns; exact tie falls back to first-pixel order
            let col = |c: &Component| c.column_sum as f64 / c.area as f64;
            let right_label: u32 = if col(c0) < col(c1) || (col(c0) == col(c1) && c0.first_index < c1.first_index) {
                1
            } else {
                2
            };
            let right = BinaryMask::new(
                w,
                h,
                labeled.labels.iter().map(|&l| l == right_label).collect(),
            )
            .expect("dimensions preserved");
            let left = BinaryMask::new(
                w,
                h,
                labeled.labels.iter().map(|&l| l != 0 && l != right_label).collect(),
            )
            .expect("dimensions preserved");
            Ok((right, left))
        }
        n => Err(EnsembleError::TooManyComponents(n)),
    }
}

#[derive(Debug)]
pub(crate) struct Component {
    pub area: usize,
    pub first_index: usize,
    pub column_sum: u64,
}

pub(crate) struct LabeledComponents {
    /// 0 = background, 1.. = component id in discovery (row-major) order.
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

/// 8-connected component labeling by iterative flood fill, row-major
/// discovery order.
pub(crate) fn label_components(mask: &BinaryMask) -> LabeledComponents {
    let (w, h) = mask.dimensions();
    let (wi, hi) = (w as usize, h as usize);
    let mut labels = vec![0u32; wi * hi];
    let mut components = Vec::new();
    let mut stack = Vec::new();

    for start in 0..wi * hi {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let id = components.len() as u32 + 1;
        let mut component = Component { area: 0, first_index: start, column_sum: 0 };
        labels[start] = id;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % wi, idx / wi);
            component.area += 1;
            component.column_sum += x as u64;
            let x0 = x.saturating_sub(1);
            let y0 = y.saturating_sub(1);
            for ny in y0..=(y + 1).min(hi - 1) {
                for nx in x0..=(x + 1).min(wi - 1) {
                    let nidx = ny * wi + nx;
                    if mask.bits()[nidx] && labels[nidx] == 0 {
                        labels[nidx] = id;
                        stack.push(nidx);
                    }
                }
            }
        }
        components.push(component);
    }
    LabeledComponents { labels, components }
}
