//! Phantom batch generator: writes images, ground-truth masks, detections,
//! RALE scores, candidate masks for the ensemble, and a ready-to-run
//! pipeline manifest.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use lungquad_core::metrics::write_rale_csv;
use lungquad_core::raster::{save_image, save_mask, save_region_mask};
use lungquad_core::synth::{
    generate_candidate_masks, generate_phantom, severity_scores, PhantomSpec, RegionScores,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::manifest::{ManifestImage, RunManifest};
use crate::{commands::ensure_dir, CliError, CmdResult, CommandOutcome, GlobalArgs};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Batch spec JSON; missing fields take their defaults
    #[arg(long)]
    pub spec: PathBuf,
}

/// How per-region scores are assigned across the batch.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScoreMode {
    /// Walk the paired severity ladder: phantom i sits at step i mod 7.
    Sweep,
    /// Same explicit scores for every phantom, region order RUR,RLR,LUR,LLR.
    Fixed { extent: [u8; 4], density: [u8; 4] },
    /// Independent uniform scores per phantom and region.
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SynthBatchSpec {
    pub count: usize,
    pub width: u32,
    pub height: u32,
    pub spacing_mm: f64,
    pub baseline_lung: f64,
    pub baseline_body: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub scores: ScoreMode,
    /// Candidate masks per phantom; 0 means the manifest points at the
    /// ground-truth lung mask directly.
    pub candidates: usize,
    pub corruption: f64,
    /// How many of the candidates are corrupted (the last ones; the rest are
    /// exact copies). Default: all of them.
    pub corrupted: Option<usize>,
}

impl Default for SynthBatchSpec {
    fn default() -> Self {
        let base = PhantomSpec::default();
        Self {
            count: 1,
            width: base.width,
            height: base.height,
            spacing_mm: base.spacing_mm,
            baseline_lung: base.baseline_lung,
            baseline_body: base.baseline_body,
            noise_sigma: base.noise_sigma,
            seed: base.seed,
            scores: ScoreMode::Sweep,
            candidates: 5,
            corruption: 0.0,
            corrupted: None,
        }
    }
}

fn scores_for(mode: &ScoreMode, index: usize, seed: u64) -> [RegionScores; 4] {
    match mode {
        ScoreMode::Sweep => severity_scores(index),
        ScoreMode::Fixed { extent, density } => std::array::from_fn(|i| RegionScores {
            extent: extent[i],
            density: density[i],
        }),
        ScoreMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (index as u64 + 1).wrapping_mul(0xD134_2543_DE82_EF95),
            );
            std::array::from_fn(|_| RegionScores {
                extent: rng.random_range(0..=4),
                density: rng.random_range(0..=3),
            })
        }
    }
}

pub fn run(global: &GlobalArgs, args: SynthArgs) -> CmdResult {
    let out_dir = global.out_dir_or(None)?;
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))?;
    let mut batch: SynthBatchSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.spec.display()))?;
    if let Some(seed) = global.seed {
        batch.seed = seed;
    }
    if batch.count == 0 {
        return Err(CliError::Usage("spec count must be at least 1".into()));
    }
    let corrupted = batch.corrupted.unwrap_or(batch.candidates);
    if corrupted > batch.candidates {
        return Err(CliError::Usage(format!(
            "corrupted count {corrupted} exceeds the {} candidates",
            batch.candidates
        )));
    }

    ensure_dir(&out_dir.join("images"))?;
    ensure_dir(&out_dir.join("gt/lung"))?;
    ensure_dir(&out_dir.join("gt/regions"))?;
    for k in 1..=batch.candidates {
        ensure_dir(&out_dir.join(format!("candidates/model{k}")))?;
    }

    let mut detections_file = File::create(out_dir.join("detections.jsonl"))
        .with_context(|| format!("creating detections in {}", out_dir.display()))?;
    let mut gt_boxes_file = File::create(out_dir.join("ground_truth.jsonl"))
        .with_context(|| format!("creating ground truth in {}", out_dir.display()))?;
    let mut rale = Vec::new();
    let mut manifest_images = Vec::with_capacity(batch.count);

    for i in 0..batch.count {
        let image_id = format!("phantom_{i:04}");
        let spec = PhantomSpec {
            image_id: image_id.clone(),
            width: batch.width,
            height: batch.height,
            spacing_mm: batch.spacing_mm,
            baseline_lung: batch.baseline_lung,
            baseline_body: batch.baseline_body,
            scores: scores_for(&batch.scores, i, batch.seed),
            noise_sigma: batch.noise_sigma,
            seed: batch.seed.wrapping_add(i as u64),
        };
        let truth = generate_phantom(&spec).with_context(|| format!("generating {image_id}"))?;

        let file_name = format!("{image_id}.png");
        save_image(&truth.image, &out_dir.join("images").join(&file_name))
            .with_context(|| format!("writing image for {image_id}"))?;
        save_mask(&truth.lung_mask, &out_dir.join("gt/lung").join(&file_name))
            .with_context(|| format!("writing lung mask for {image_id}"))?;
        save_region_mask(&truth.region_mask, &out_dir.join("gt/regions").join(&file_name))
            .with_context(|| format!("writing region mask for {image_id}"))?;

        for record in &truth.detections {
            writeln!(detections_file, "{}", serde_json::to_string(record).context("serializing detection")?)
                .context("writing detections")?;
        }
        for gt in truth.ground_truth_boxes() {
            writeln!(gt_boxes_file, "{}", serde_json::to_string(&gt).context("serializing ground truth")?)
                .context("writing ground truth")?;
        }
        rale.extend(truth.rale.iter().cloned());

        let mut mask_paths = Vec::new();
        if batch.candidates == 0 {
            mask_paths.push(PathBuf::from("gt/lung").join(&file_name));
        } else {
            // exact copies first, corrupted candidates last
            let mut masks = vec![truth.lung_mask.clone(); batch.candidates - corrupted];
            if corrupted > 0 {
                masks.extend(
                    generate_candidate_masks(&truth, corrupted, batch.corruption, spec.seed)
                        .with_context(|| format!("corrupting masks for {image_id}"))?,
                );
            }
            for (k, mask) in masks.iter().enumerate() {
                let rel = PathBuf::from(format!("candidates/model{}", k + 1)).join(&file_name);
                save_mask(mask, &out_dir.join(&rel))
                    .with_context(|| format!("writing candidate mask for {image_id}"))?;
                mask_paths.push(rel);
            }
        }
        manifest_images.push(ManifestImage {
            image_id: Some(image_id),
            image: PathBuf::from("images").join(&file_name),
            masks: mask_paths,
        });
    }

    let rale_file = File::create(out_dir.join("rale.csv"))
        .with_context(|| format!("creating rale.csv in {}", out_dir.display()))?;
    write_rale_csv(rale_file, &rale).context("writing RALE scores")?;

    let manifest = RunManifest {
        spacing_mm: Some(batch.spacing_mm),
        detections: PathBuf::from("detections.jsonl"),
        out_dir: None,
        images: manifest_images,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    std::fs::write(out_dir.join("manifest.json"), manifest_json + "\n")
        .with_context(|| format!("writing manifest in {}", out_dir.display()))?;

    eprintln!("wrote {} phantoms to {}", batch.count, out_dir.display());
    Ok(CommandOutcome::Complete)
}
