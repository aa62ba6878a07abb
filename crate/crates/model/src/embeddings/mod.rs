//! Label embedding providers.
//!
//! Providers turn an ordered vocabulary into one d-dimensional vector per
//! label. Three interchangeable providers are registered by name: `hashed`
//! (deterministic seeded draws from the label bytes), `file` (embedding
//! table on disk) and `remote` (HTTP service). The hashed provider is the
//! default stand-in for a language model: reproducibility matters more
//! here than semantics.

mod provider;
mod remote;

pub use provider::{FileProvider, HashedProvider};
pub use remote::RemoteProvider;

use serde::{Deserialize, Serialize};

use ctxseg_data::Vocab;

use crate::error::ModelError;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    File,
    Hashed,
    Remote,
}

/// One unit-norm embedding row per vocabulary label, in vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbeddingSet {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl LabelEmbeddingSet {
    /// Flat row-major `(labels, dim)` table.
    pub fn flat(&self) -> Vec<f64> {
        self.vectors.iter().flatten().copied().collect()
    }
}

/// A source of raw (unnormalized) label vectors.
pub trait EmbeddingProvider {
    fn name(&self) -> &'static str;
    fn provenance(&self) -> Provenance;
    /// `(dim, one row per vocab label, in vocab order)`.
    fn raw(&self, vocab: &Vocab) -> Result<(usize, Vec<Vec<f64>>)>;
}

/// Unit L2 normalization; idempotent, rejects zero rows.
fn normalize(label: &str, row: &[f64]) -> Result<Vec<f64>> {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(ModelError::ZeroNorm(label.to_string()));
    }
    Ok(row.iter().map(|v| v / norm).collect())
}

/// Produce the embedding set for a vocabulary: provider output, validated
/// and L2-normalized.
pub fn embed_labels(vocab: &Vocab, provider: &dyn EmbeddingProvider) -> Result<LabelEmbeddingSet> {
    if vocab.is_empty() {
        return Err(ModelError::Config("empty vocabulary".into()));
    }
    let (dim, rows) = provider.raw(vocab)?;
    if rows.len() != vocab.len() {
        return Err(ModelError::Config(format!(
            "provider returned {} rows for {} labels",
            rows.len(),
            vocab.len()
        )));
    }
    let mut vectors = Vec::with_capacity(rows.len());
    for (label, row) in vocab.labels().iter().zip(&rows) {
        if row.len() != dim {
            return Err(ModelError::DimMismatch { expected: dim, got: row.len() });
        }
        if !row.iter().all(|v| v.is_finite()) {
            return Err(ModelError::EmbeddingFile(format!("non-finite value for {label:?}")));
        }
        vectors.push(normalize(label, row)?);
    }
    Ok(LabelEmbeddingSet { dim, vectors, provenance: provider.provenance() })
}

/// Provider selection config; `provider` picks the registered
/// implementation by name.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: String,
    pub dim: usize,
    pub seed: u64,
    /// Embedding-table file, `file` provider only.
    #[serde(default)]
    pub path: Option<String>,
    /// `http://host:port`, `remote` provider only.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// When set, the table becomes an optimizable parameter.
    #[serde(default)]
    pub trainable: bool,
}

fn default_timeout_ms() -> u64 {
    2000
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: "hashed".into(),
            dim: 32,
            seed: 0,
            path: None,
            endpoint: None,
            timeout_ms: default_timeout_ms(),
            trainable: false,
        }
    }
}

/// Name-based provider registry.
pub fn provider_from_config(cfg: &EmbeddingConfig) -> Result<Box<dyn EmbeddingProvider>> {
    match cfg.provider.as_str() {
        "hashed" => Ok(Box::new(HashedProvider { dim: cfg.dim, seed: cfg.seed })),
        "file" => {
            let path = cfg
                .path
                .clone()
                .ok_or_else(|| ModelError::Config("file provider needs `path`".into()))?;
            Ok(Box::new(FileProvider { path: path.into() }))
        }
        "remote" => {
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| ModelError::Config("remote provider needs `endpoint`".into()))?;
            Ok(Box::new(RemoteProvider { endpoint, timeout_ms: cfg.timeout_ms }))
        }
        other => Err(ModelError::UnknownProvider(other.to_string())),
    }
}

/// Positive label pairs; stored as ordered index pairs `(a < b)`, unique,
/// never self-referential. Everything not listed is a negative pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityPairs {
    positives: Vec<(usize, usize)>,
}

impl SimilarityPairs {
    pub fn from_labels(pairs: &[[String; 2]], vocab: &Vocab) -> Result<Self> {
        let mut positives = Vec::new();
        for [a, b] in pairs {
            if a == b {
                return Err(ModelError::SelfPair(a.clone()));
            }
            let ia = vocab.index_of(a)?;
            let ib = vocab.index_of(b)?;
            let key = (ia.min(ib), ia.max(ib));
            if !positives.contains(&key) {
                positives.push(key);
            }
        }
        Ok(Self { positives })
    }

    pub fn is_positive(&self, a: usize, b: usize) -> bool {
        self.positives.contains(&(a.min(b), a.max(b)))
    }

    pub fn positives(&self) -> &[(usize, usize)] {
        &self.positives
    }
}
