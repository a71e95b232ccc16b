//! Batch run manifest: which images to process, with which candidate masks
//! and detections. Paths are resolved relative to the manifest file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Batch-wide spacing; per-image sidecars and the CLI flag take priority
    /// as documented in the README.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_mm: Option<f64>,
    /// Detections JSONL covering the whole batch, keyed by image_id.
    pub detections: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub images: Vec<ManifestImage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestImage {
    /// Defaults to the image file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    pub image: PathBuf,
    pub masks: Vec<PathBuf>,
}

impl ManifestImage {
    pub fn id(&self) -> String {
        self.image_id.clone().unwrap_or_else(|| {
            self.image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.image.display().to_string())
        })
    }
}

impl RunManifest {
    /// Load a manifest, resolve its paths against the manifest's directory,
    /// and verify every referenced path exists.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let mut manifest: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        if manifest.images.is_empty() {
            bail!("manifest {} lists no images", path.display());
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };

        manifest.detections = resolve(&manifest.detections);
        if !manifest.detections.is_file() {
            bail!("detections file {} does not exist", manifest.detections.display());
        }
        manifest.out_dir = manifest.out_dir.as_ref().map(resolve);
        for entry in &mut manifest.images {
            entry.image = resolve(&entry.image);
            if !entry.image.is_file() {
                bail!("image {} does not exist", entry.image.display());
            }
            if entry.masks.is_empty() {
                bail!("image {} lists no candidate masks", entry.image.display());
            }
            for mask in &mut entry.masks {
                *mask = resolve(mask);
                if !mask.is_file() {
                    bail!("mask {} does not exist", mask.display());
                }
            }
        }
        Ok(manifest)
    }
}
