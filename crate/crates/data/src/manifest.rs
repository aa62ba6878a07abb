//! Dataset manifest: one JSON document per split.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::Result;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub width: u32,
    pub height: u32,
    pub classes: Vec<String>,
    /// Positive pairs for the contrastive objective; all other label pairs
    /// are implicitly negative.
    pub similarity_pairs: Vec<[String; 2]>,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub id: usize,
    pub image: String,
    pub mask: String,
    pub seed: u64,
    pub stream: u64,
    pub objects: Vec<ManifestObject>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestObject {
    pub class: String,
    pub shape: String,
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| DataError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| DataError::io(path.display().to_string(), e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(DataError::Manifest(format!(
                "unsupported manifest version {}",
                m.format_version
            )));
        }
        Ok(m)
    }
}
