//! One module per subcommand.

pub mod correlate;
pub mod ensemble;
pub mod eval_det;
pub mod eval_seg;
pub mod landmarks;
pub mod pipeline;
pub mod quantify;
pub mod split;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::CliError;

/// Mask/image files of a directory, sorted by filename.
pub(crate) fn list_raster_files(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "pgm" | "pnm")) {
            let name = path.file_name().expect("listed entry has a name").to_string_lossy().into_owned();
            files.push((name, path));
        }
    }
    files.sort();
    Ok(files)
}

pub(crate) fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .with_context(|| format!("creating directory {}", path.display()))
        .map_err(CliError::from)
}

pub(crate) fn write_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .context("serializing report")
        .map_err(CliError::from)?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::from)
}
