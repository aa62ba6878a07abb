//! Hashed and file-backed providers.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use ctxseg_core::{fnv1a64, Rng};
use ctxseg_data::Vocab;

use super::{EmbeddingProvider, Provenance};
use crate::error::ModelError;
use crate::Result;

/// Deterministic stand-in for a language model: each label's bytes seed an
/// independent stream of Gaussian draws, so a label's vector depends only
/// on `(seed, label)`.
#[derive(Debug, Clone)]
pub struct HashedProvider {
    pub dim: usize,
    pub seed: u64,
}

impl EmbeddingProvider for HashedProvider {
    fn name(&self) -> &'static str {
        "hashed"
    }

    fn provenance(&self) -> Provenance {
        Provenance::Hashed
    }

    fn raw(&self, vocab: &Vocab) -> Result<(usize, Vec<Vec<f64>>)> {
        if self.dim == 0 {
            return Err(ModelError::Config("embedding dim must be positive".into()));
        }
        let rows = vocab
            .labels()
            .iter()
            .map(|label| {
                let mut rng = Rng::new(self.seed, fnv1a64(label.as_bytes()));
                (0..self.dim).map(|_| rng.standard_normal()).collect()
            })
            .collect();
        Ok((self.dim, rows))
    }
}

/// Embedding table file: UTF-8 text, one record per line,
/// `label<TAB>v1,v2,...,vd`.
#[derive(Debug, Clone)]
pub struct FileProvider {
    pub path: PathBuf,
}

impl FileProvider {
    fn parse(&self, text: &str) -> Result<(usize, BTreeMap<String, Vec<f64>>)> {
        let mut map = BTreeMap::new();
        let mut dim = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (label, rest) = line.split_once('\t').ok_or_else(|| {
                ModelError::EmbeddingFile(format!("line {}: missing tab separator", lineno + 1))
            })?;
            let values: Vec<f64> = rest
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        ModelError::EmbeddingFile(format!(
                            "line {}: bad number {v:?}",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(ModelError::DimMismatch { expected: d, got: values.len() })
                }
                _ => {}
            }
            if map.insert(label.to_string(), values).is_some() {
                return Err(ModelError::EmbeddingFile(format!("duplicate label {label:?}")));
            }
        }
        let dim = dim.ok_or_else(|| ModelError::EmbeddingFile("empty file".into()))?;
        Ok((dim, map))
    }
}

impl EmbeddingProvider for FileProvider {
    fn name(&self) -> &'static str {
        "file"
    }

    fn provenance(&self) -> Provenance {
        Provenance::File
    }

    fn raw(&self, vocab: &Vocab) -> Result<(usize, Vec<Vec<f64>>)> {
        let text = fs::read_to_string(&self.path).map_err(|e| {
            ModelError::EmbeddingFile(format!("{}: {e}", self.path.display()))
        })?;
        let (dim, map) = self.parse(&text)?;
        let rows = vocab
            .labels()
            .iter()
            .map(|label| {
                map.get(label).cloned().ok_or_else(|| ModelError::MissingLabel(label.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((dim, rows))
    }
}
