//! Segmentation comparison shaped like the single-vs-ensemble table: one row
//! per model with mean +/- std Dice, the paired-test p-value against the
//! ensemble, and a trailing star on significant rows (p < 0.05).

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use lungquad_core::metrics::{dice, paired_t_test};
use lungquad_core::raster::load_mask;

use crate::commands::list_raster_files;
use crate::{CliError, CmdResult, CommandOutcome, GlobalArgs};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Args)]
pub struct EvalSegArgs {
    /// Ground-truth mask directory
    #[arg(long)]
    pub gt_dir: PathBuf,

    /// Ensemble prediction directory (the comparison baseline)
    #[arg(long)]
    pub ensemble_dir: PathBuf,

    /// One prediction directory per single model
    #[arg(long, num_args = 1.., required = true)]
    pub model_dirs: Vec<PathBuf>,

    /// Report CSV path (default: stdout only)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct ModelRow {
    name: String,
    mean: f64,
    std: f64,
    p_vs_ensemble: Option<f64>,
}

impl ModelRow {
    fn significant(&self) -> bool {
        self.p_vs_ensemble.is_some_and(|p| p < SIGNIFICANCE_LEVEL)
    }

    fn display(&self) -> String {
        let star = if self.significant() { "*" } else { "" };
        format!("{:.3} \u{b1} {:.3}{star}", self.mean, self.std)
    }
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Dice against ground truth for every file of `dir`, in gt filename order.
fn dice_scores(dir: &Path, gt: &[(String, PathBuf)]) -> Result<Vec<f64>, CliError> {
    let files = list_raster_files(dir)?;
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    let gt_names: Vec<&str> = gt.iter().map(|(n, _)| n.as_str()).collect();
    if names != gt_names {
        return Err(CliError::Data(anyhow::anyhow!(
            "file set in {} does not match ground truth: {:?} vs {:?}",
            dir.display(),
            names,
            gt_names
        )));
    }
    let mut scores = Vec::with_capacity(files.len());
    for ((_, pred_path), (_, gt_path)) in files.iter().zip(gt) {
        let pred = load_mask(pred_path).with_context(|| format!("loading {}", pred_path.display()))?;
        let truth = load_mask(gt_path).with_context(|| format!("loading {}", gt_path.display()))?;
        scores.push(dice(&pred, &truth).with_context(|| format!("dice for {}", pred_path.display()))?);
    }
    Ok(scores)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

pub fn run(_global: &GlobalArgs, args: EvalSegArgs) -> CmdResult {
    let gt = list_raster_files(&args.gt_dir)?;
    if gt.is_empty() {
        return Err(CliError::Data(anyhow::anyhow!(
            "ground-truth directory {} holds no mask files",
            args.gt_dir.display()
        )));
    }
    let ensemble_scores = dice_scores(&args.ensemble_dir, &gt)?;

    let mut rows = Vec::new();
    for dir in &args.model_dirs {
        let scores = dice_scores(dir, &gt)?;
        let (mean, std) = mean_std(&scores);
        let test = paired_t_test(&ensemble_scores, &scores).context("paired test")?;
        rows.push(ModelRow { name: dir_name(dir), mean, std, p_vs_ensemble: Some(test.p_value) });
    }
    let (ens_mean, ens_std) = mean_std(&ensemble_scores);
    rows.push(ModelRow {
        name: dir_name(&args.ensemble_dir),
        mean: ens_mean,
        std: ens_std,
        p_vs_ensemble: None,
    });

    let mut csv = String::from("no,model,dice_mean,dice_std,p_vs_ensemble,display\n");
    for (i, row) in rows.iter().enumerate() {
        let p = row.p_vs_ensemble.map(|p| p.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            row.name,
            row.mean,
            row.std,
            p,
            row.display()
        ));
    }

    print!("{csv}");
    if let Some(out) = &args.out {
        let mut file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
        file.write_all(csv.as_bytes()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(CommandOutcome::Complete)
}
