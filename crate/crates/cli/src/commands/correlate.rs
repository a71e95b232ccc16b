//! RALE correlation report: 4 regions x {extent, density} Pearson cells as
//! JSON, plus per-region long-format CSVs binned by score for boxplots.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use lungquad_core::metrics::{correlate_rale, join_rale, read_rale_csv, ScoreKind};
use lungquad_core::quantify::read_region_stats_csv;
use lungquad_core::raster::Region;

use crate::commands::{ensure_dir, write_json_pretty};
use crate::{CliError, CmdResult, CommandOutcome, GlobalArgs};

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Region stats CSV produced by `pipeline` or `quantify`
    #[arg(long)]
    pub stats: PathBuf,

    /// RALE scores CSV: image_id,region,extent,density
    #[arg(long)]
    pub rale: PathBuf,

    /// Exclude images whose total RALE score (sum of extent x density) is 0
    #[arg(long)]
    pub filter_positive_total: bool,
}

pub fn run(global: &GlobalArgs, args: CorrelateArgs) -> CmdResult {
    let out_dir = global.out_dir_or(Some(Path::new(".")))?;
    ensure_dir(&out_dir)?;

    let stats_file = File::open(&args.stats).with_context(|| format!("opening {}", args.stats.display()))?;
    let stats = read_region_stats_csv(stats_file).context("parsing region stats")?;
    let rale_file = File::open(&args.rale).with_context(|| format!("opening {}", args.rale.display()))?;
    let scores = read_rale_csv(rale_file).context("parsing RALE scores")?;

    let cells = correlate_rale(&stats, &scores, args.filter_positive_total);
    write_json_pretty(&out_dir.join("correlation.json"), &cells)?;
    for cell in &cells {
        match (cell.r, cell.p, &cell.error) {
            (Some(r), Some(p), _) => eprintln!(
                "{} {}: r={r:.4} p={p:.3e} n={}",
                cell.region, cell.score_kind, cell.n
            ),
            (_, _, Some(reason)) => {
                eprintln!("{} {}: undefined ({reason}, n={})", cell.region, cell.score_kind, cell.n)
            }
            _ => unreachable!("cell has either values or an error"),
        }
    }

    // boxplot source data, one file per region, binned by score value
    let joined = join_rale(&stats, &scores, args.filter_positive_total);
    for region in Region::ALL {
        let path = out_dir.join(format!("boxplot_{}.csv", region.abbrev()));
        let mut writer = csv::Writer::from_writer(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        writer
            .write_record(["score_kind", "score", "mean_normalized_intensity"])
            .context("writing boxplot header")?;
        for kind in ScoreKind::ALL {
            for sample in joined.iter().filter(|j| j.region == region) {
                let score = match kind {
                    ScoreKind::Extent => sample.extent,
                    ScoreKind::Density => sample.density,
                };
                writer
                    .write_record([
                        kind.name(),
                        &score.to_string(),
                        &sample.mean_normalized_intensity.to_string(),
                    ])
                    .context("writing boxplot row")?;
            }
        }
        writer.flush().context("flushing boxplot CSV")?;
    }

    if cells.iter().all(|c| !c.is_ok()) {
        return Err(CliError::Data(anyhow::anyhow!(
            "no correlation cell could be computed; see correlation.json for per-cell reasons"
        )));
    }
    Ok(CommandOutcome::Complete)
}
