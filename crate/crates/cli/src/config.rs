//! Pipeline configuration: a single JSON document per run. Unknown keys
//! are errors everywhere, so config drift fails loudly.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ctxseg_data::scene::SceneConfig;
use ctxseg_model::{EmbeddingConfig, LossConfig, ModelConfig};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub train: String,
    pub val: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Adam learning rate.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_alpha() -> f64 {
    1e-4
}

fn default_batch() -> usize {
    16
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { alpha: default_alpha(), batch_size: default_batch() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AugmentSettings {
    #[serde(default = "default_hflip")]
    pub hflip_prob: f64,
    #[serde(default)]
    pub crop: Option<u32>,
}

fn default_hflip() -> f64 {
    0.5
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self { hflip_prob: default_hflip(), crop: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default)]
    pub include_background: bool,
    #[serde(default = "default_iou_thresh")]
    pub iou_thresh: f64,
    /// Training samples used for the per-epoch train-mIoU column.
    #[serde(default = "default_train_eval")]
    pub train_eval_subset: usize,
}

fn default_iou_thresh() -> f64 {
    0.5
}

fn default_train_eval() -> usize {
    50
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            include_background: false,
            iou_thresh: default_iou_thresh(),
            train_eval_subset: default_train_eval(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeChoice {
    F32,
    F64,
}

impl Default for DtypeChoice {
    fn default() -> Self {
        DtypeChoice::F32
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetPaths,
    /// One of `baseline`, `llm`, `xattn`, `gnn`.
    pub variant: String,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dtype: DtypeChoice,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub embeddings: EmbeddingConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub augment: AugmentSettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !ctxseg_model::VARIANT_NAMES.contains(&self.variant.as_str()) {
            bail!(
                "unknown variant {:?} (expected one of {:?})",
                self.variant,
                ctxseg_model::VARIANT_NAMES
            );
        }
        if self.optimizer.batch_size == 0 {
            bail!("batch_size must be positive");
        }
        if self.optimizer.alpha <= 0.0 {
            bail!("alpha must be positive");
        }
        self.loss.validate().map_err(anyhow::Error::from)?;
        Ok(())
    }
}

/// Config for `gen-data`: the scene generator plus split sizes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default)]
    pub scene: SceneConfig,
    pub train_count: usize,
    pub val_count: usize,
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "dataset": {"train": "t", "val": "v"},
            "variant": "gnn",
            "epochs": 3
        })
    }

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let cfg: TrainConfig = serde_json::from_value(minimal_json()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.optimizer.alpha, 1e-4);
        assert_eq!(cfg.optimizer.batch_size, 16);
        assert_eq!(cfg.loss.lambda, 0.1);
        assert_eq!(cfg.loss.margin, 1.0);
        assert_eq!(cfg.embeddings.dim, 32);
        assert_eq!(cfg.embeddings.provider, "hashed");
        assert_eq!(cfg.dtype, DtypeChoice::F32);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let mut v = minimal_json();
        v["learning_rate_decay"] = serde_json::json!(0.9);
        let err = serde_json::from_value::<TrainConfig>(v).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");

        let mut nested = minimal_json();
        nested["optimizer"] = serde_json::json!({"alpha": 0.001, "momentum": 0.9});
        assert!(serde_json::from_value::<TrainConfig>(nested).is_err());
    }

    #[test]
    fn bad_variant_is_rejected() {
        let mut v = minimal_json();
        v["variant"] = serde_json::json!("resnet");
        let cfg: TrainConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.validate().is_err());
    }
}
