//! Checkpoint evaluation: deterministic report as JSON plus a CSV row per
//! class.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use ctxseg_core::Scalar;
use ctxseg_data::{load_split, LoadedSplit};
use ctxseg_model::EvalReport;

use crate::checkpoint::Checkpoint;
use crate::pipeline::evaluate_split;
use crate::trainer::restore_model;

pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("class,iou,ap\n");
    for (i, name) in report.classes.iter().enumerate() {
        let iou = report.per_class_iou[i]
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "".to_string());
        let ap = if i == 0 {
            "".to_string() // background has no detection AP
        } else {
            report.per_class_ap[i - 1]
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "".to_string())
        };
        out.push_str(&format!("{name},{iou},{ap}\n"));
    }
    out.push_str(&format!("miou,{:.6},\n", report.miou));
    out.push_str(&format!("map,,{:.6}\n", report.map));
    out
}

pub fn evaluate_checkpoint<F: Scalar>(
    ckpt: &Checkpoint<F>,
    split_dir: &Path,
    out_dir: &Path,
) -> Result<EvalReport> {
    let split: LoadedSplit = load_split(split_dir)?;
    if split.vocab.labels() != ckpt.meta.classes.as_slice() {
        bail!(
            "vocabulary mismatch: checkpoint has {:?}, dataset has {:?}",
            ckpt.meta.classes,
            split.vocab.labels()
        );
    }
    let (built, _) = restore_model::<F>(ckpt)?;
    let report = evaluate_split(
        built.variant.as_ref(),
        &built.store,
        &split,
        ckpt.meta.config.eval.include_background,
        ckpt.meta.config.eval.iou_thresh,
    )?;

    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;
    let json_path = out_dir.join("report.json");
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;
    let csv_path = out_dir.join("report.csv");
    fs::write(&csv_path, report_csv(&report))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(report)
}
