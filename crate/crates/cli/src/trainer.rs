//! End-to-end training loop: batched Adam over the combined objective,
//! per-epoch metric rows, checkpoint persistence.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use ctxseg_core::{AdamConfig, AdamState, Rng, Scalar, Session, Tape};
use ctxseg_data::{augment, AugmentConfig, LoadedSplit};
use ctxseg_model::variants::{ForwardInput, GraphSource};
use ctxseg_model::{contrastive_loss, cross_entropy_loss, total_loss, ModelError};

use crate::checkpoint::{self, CheckpointMeta, RngSnapshot};
use crate::config::TrainConfig;
use crate::pipeline::{build_model, evaluate_samples, BuiltModel, STREAM_TRAIN};

#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub loss_ce: f64,
    pub loss_contrastive: f64,
    pub train_miou: f64,
    pub val_miou: f64,
    pub val_map: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub rows: Vec<EpochRow>,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
}

pub const METRICS_HEADER: &str =
    "epoch,loss,loss_ce,loss_contrastive,train_miou,val_miou,val_map";

pub fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.loss, r.loss_ce, r.loss_contrastive, r.train_miou, r.val_miou, r.val_map
        ));
    }
    out
}

/// Train per config, writing `metrics.csv` and `model.ckpt` into `out_dir`.
pub fn train<F: Scalar>(
    cfg: &TrainConfig,
    train_split: &LoadedSplit,
    val_split: &LoadedSplit,
    out_dir: &Path,
) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;

    let BuiltModel { variant, mut store, vocab, pairs } =
        build_model::<F>(cfg, &train_split.vocab, &train_split.similarity_pairs)?;
    let mut adam = AdamState::new(
        AdamConfig { alpha: cfg.optimizer.alpha, ..AdamConfig::default() },
        &store,
    );
    let mut rng = Rng::new(cfg.seed, STREAM_TRAIN);
    let aug_cfg = AugmentConfig { hflip_prob: cfg.augment.hflip_prob, crop: cfg.augment.crop };

    let mut rows: Vec<EpochRow> = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_split.samples.len()).collect();
        rng.shuffle(&mut order);

        let (mut sum_l, mut sum_ce, mut sum_con, mut seen) = (0.0f64, 0.0f64, 0.0f64, 0usize);
        for batch in order.chunks(cfg.optimizer.batch_size) {
            // one tape per batch: the contrastive term pools refined
            // class embeddings across the whole batch
            let tape = Tape::new();
            let sess = Session::new(&tape, &store);
            let mut ce_terms = Vec::with_capacity(batch.len());
            let mut class_rows: std::collections::BTreeMap<usize, Vec<ctxseg_core::Var>> =
                std::collections::BTreeMap::new();
            for &idx in batch {
                let sample = &train_split.samples[idx];
                let (image, mask) = augment(&sample.image, &sample.mask, &aug_cfg, &mut rng)?;
                let graph = if variant.uses_graph() {
                    GraphSource::Mask(&mask)
                } else {
                    GraphSource::None
                };
                let out = variant
                    .forward(&sess, &ForwardInput { image: &image, graph })
                    .with_context(|| format!("forward on sample {}", sample.scene_id))?;
                ce_terms.push(cross_entropy_loss(&sess, out.logits, &mask, &cfg.loss)?);
                if let Some(rows) = out.class_rows {
                    for (class, var) in rows {
                        class_rows.entry(class).or_default().push(var);
                    }
                }
            }

            let mut ce_sum = ce_terms[0];
            for &t in &ce_terms[1..] {
                ce_sum = tape.add(ce_sum, t).map_err(anyhow::Error::from)?;
            }
            let l_ce = tape
                .scale(ce_sum, F::from_f64(1.0 / batch.len() as f64))
                .map_err(anyhow::Error::from)?;

            // pool per-class rows over the batch (mean of per-sample rows)
            let mut pooled: Vec<(usize, ctxseg_core::Var)> = Vec::new();
            for (class, rows) in &class_rows {
                let var = if rows.len() == 1 {
                    rows[0]
                } else {
                    let stacked = tape.concat_rows(rows).map_err(anyhow::Error::from)?;
                    let w = F::from_f64(1.0 / rows.len() as f64);
                    let pool = tape.constant(ctxseg_core::Tensor::filled(
                        vec![1, rows.len()],
                        w,
                    )?);
                    tape.matmul(pool, stacked).map_err(anyhow::Error::from)?
                };
                pooled.push((*class, var));
            }

            let (loss, con_value) = if cfg.loss.lambda > 0.0 && pooled.len() >= 2 {
                match contrastive_loss(&sess, &pooled, &pairs, &cfg.loss) {
                    Ok(l_con) => (
                        total_loss(&tape, l_ce, l_con, &cfg.loss)?,
                        tape.scalar_value(l_con).as_f64(),
                    ),
                    Err(ModelError::NoPairs) => (l_ce, 0.0),
                    Err(e) => return Err(e.into()),
                }
            } else {
                (l_ce, 0.0)
            };

            let l_value = tape.scalar_value(loss).as_f64();
            if !l_value.is_finite() {
                anyhow::bail!("non-finite loss at epoch {epoch}");
            }
            sum_l += l_value * batch.len() as f64;
            sum_ce += tape.scalar_value(l_ce).as_f64() * batch.len() as f64;
            sum_con += con_value * batch.len() as f64;
            seen += batch.len();

            let grads = tape.backward(loss).map_err(anyhow::Error::from)?;
            let mut grad_slots: Vec<Option<Vec<F>>> = vec![None; store.len()];
            for (pid, var) in sess.bound() {
                if let Some(g) = grads.wrt(var) {
                    grad_slots[pid.0] = Some(g.to_vec());
                }
            }
            adam.step(&mut store, &grad_slots).map_err(anyhow::Error::from)?;
        }

        let subset = cfg.eval.train_eval_subset.min(train_split.samples.len());
        let train_report = evaluate_samples(
            variant.as_ref(),
            &store,
            &vocab,
            &train_split.samples[..subset],
            cfg.eval.include_background,
            cfg.eval.iou_thresh,
        )?;
        let val_report = evaluate_samples(
            variant.as_ref(),
            &store,
            &vocab,
            &val_split.samples,
            cfg.eval.include_background,
            cfg.eval.iou_thresh,
        )?;
        rows.push(EpochRow {
            epoch,
            loss: sum_l / seen.max(1) as f64,
            loss_ce: sum_ce / seen.max(1) as f64,
            loss_contrastive: sum_con / seen.max(1) as f64,
            train_miou: train_report.miou,
            val_miou: val_report.miou,
            val_map: val_report.map,
        });
    }

    let metrics_path = out_dir.join("metrics.csv");
    fs::write(&metrics_path, metrics_csv(&rows))
        .with_context(|| format!("writing {}", metrics_path.display()))?;

    let (state, draws) = rng.position();
    let meta = CheckpointMeta {
        config: cfg.clone(),
        epoch: cfg.epochs,
        rng: RngSnapshot { seed: rng.seed(), stream: rng.stream(), state, draws },
        rng_version: ctxseg_core::rng::RNG_VERSION,
        classes: vocab.labels().to_vec(),
        similarity_pairs: train_split.similarity_pairs.clone(),
    };
    let checkpoint_path = out_dir.join("model.ckpt");
    checkpoint::save(&checkpoint_path, &meta, &store, &adam)?;

    Ok(TrainSummary { rows, checkpoint_path, metrics_path })
}

/// Rebuild a model from a checkpoint: construct the variant from the saved
/// config with placeholder embeddings (the checkpoint overwrites the
/// table, so the original provider is never consulted), then restore
/// parameters and optimizer state.
pub fn restore_model<F: Scalar>(
    ckpt: &checkpoint::Checkpoint<F>,
) -> Result<(BuiltModel<F>, AdamState<F>)> {
    let vocab = ctxseg_data::Vocab::new(ckpt.meta.classes.clone())?;
    let dim = ckpt
        .tensors
        .iter()
        .find(|(name, _)| name == "embeddings.table")
        .map(|(_, t)| t.shape()[1])
        .unwrap_or(ckpt.meta.config.embeddings.dim);
    let embeddings = crate::pipeline::placeholder_embeddings(&vocab, dim);
    let mut built = crate::pipeline::build_model_with::<F>(
        &ckpt.meta.config,
        &vocab,
        &ckpt.meta.similarity_pairs,
        &embeddings,
    )?;
    let mut adam = AdamState::new(
        AdamConfig { alpha: ckpt.meta.config.optimizer.alpha, ..AdamConfig::default() },
        &built.store,
    );
    checkpoint::restore_into(ckpt, &mut built.store, &mut adam)?;
    Ok((built, adam))
}
