//! Four-variant ablation: train and evaluate every variant with a shared
//! seed, then render the incremental table.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;

use ctxseg_core::Scalar;
use ctxseg_data::LoadedSplit;
use ctxseg_model::VARIANT_NAMES;

use crate::config::TrainConfig;
use crate::pipeline::{evaluate_split, miou_over_classes};
use crate::trainer::{restore_model, train};

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub miou: f64,
    pub map: f64,
    pub delta_miou: f64,
    pub delta_map: f64,
    /// mIoU over the confusable pair's classes only.
    pub confusable_miou: f64,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn csv(&self) -> String {
        let mut out =
            String::from("variant,miou,map,delta_miou,delta_map,confusable_miou\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:+.6},{:+.6},{:.6}\n",
                r.variant, r.miou, r.map, r.delta_miou, r.delta_map, r.confusable_miou
            ));
        }
        out
    }

    pub fn rendered(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>8} {:>8} {:>9} {:>9} {:>12}\n",
            "variant", "mIoU", "mAP", "dmIoU", "dmAP", "confusable"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>8.4} {:>8.4} {:>+9.4} {:>+9.4} {:>12.4}\n",
                r.variant, r.miou, r.map, r.delta_miou, r.delta_map, r.confusable_miou
            ));
        }
        out
    }
}

/// Train and evaluate one variant; returns `(miou, map, confusable_miou)`.
fn run_variant<F: Scalar>(
    base: &TrainConfig,
    variant: &'static str,
    train_split: &LoadedSplit,
    val_split: &LoadedSplit,
    out_dir: &Path,
) -> Result<(f64, f64, f64)> {
    let cfg = TrainConfig { variant: variant.to_string(), ..base.clone() };
    let dir = out_dir.join(variant);
    let summary = train::<F>(&cfg, train_split, val_split, &dir)
        .with_context(|| format!("training variant {variant}"))?;
    let ckpt = crate::checkpoint::load::<F>(&summary.checkpoint_path)?;
    let (built, _) = restore_model::<F>(&ckpt)?;
    let report = evaluate_split(
        built.variant.as_ref(),
        &built.store,
        val_split,
        cfg.eval.include_background,
        cfg.eval.iou_thresh,
    )?;

    let confusable: Vec<usize> = val_split
        .similarity_pairs
        .iter()
        .flat_map(|[a, b]| [a, b])
        .filter_map(|l| val_split.vocab.index_of(l).ok())
        .collect();
    Ok((report.miou, report.map, miou_over_classes(&report, &confusable)))
}

/// All four variants with a shared seed. Variants run in parallel; each
/// run is internally sequential, so results are independent of scheduling.
pub fn run_ablation<F: Scalar>(
    base: &TrainConfig,
    train_split: &LoadedSplit,
    val_split: &LoadedSplit,
    out_dir: &Path,
) -> Result<AblationTable> {
    let results: Vec<Result<(f64, f64, f64)>> = VARIANT_NAMES
        .par_iter()
        .map(|variant| run_variant::<F>(base, variant, train_split, val_split, out_dir))
        .collect();

    let mut rows = Vec::with_capacity(4);
    let mut prev: Option<(f64, f64)> = None;
    for (variant, result) in VARIANT_NAMES.iter().zip(results) {
        let (miou, map, confusable_miou) = result?;
        let (dm, da) = match prev {
            Some((pm, pa)) => (miou - pm, map - pa),
            None => (0.0, 0.0),
        };
        rows.push(AblationRow {
            variant,
            miou,
            map,
            delta_miou: dm,
            delta_map: da,
            confusable_miou,
        });
        prev = Some((miou, map));
    }
    let table = AblationTable { rows };
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("ablation.csv"), table.csv())?;
    fs::write(out_dir.join("ablation.txt"), table.rendered())?;
    Ok(table)
}
