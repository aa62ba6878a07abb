//! Checkpoint persistence.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! magic "CSEG" | u32 version | u64 json_len | json meta block
//! | u32 tensor count
//! | per tensor: u32 name_len, name, u8 dtype, u32 rank, u64*rank extents, payload
//! | u32 crc32 over everything above
//! ```
//!
//! The JSON block carries the config snapshot, epoch, RNG position and the
//! vocabulary. Optimizer moments are stored as tensors under `adam.m.` /
//! `adam.v.` prefixes; the step counter under `adam.t`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};


use ctxseg_core::{AdamState, Dtype, ParamStore, Scalar, Tensor};

use crate::config::TrainConfig;

pub const MAGIC: &[u8; 4] = b"CSEG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngSnapshot {
    pub seed: u64,
    pub stream: u64,
    pub state: u64,
    pub draws: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub epoch: usize,
    pub rng: RngSnapshot,
    pub rng_version: u32,
    pub classes: Vec<String>,
    pub similarity_pairs: Vec<[String; 2]>,
}

pub struct Checkpoint<F: Scalar> {
    pub meta: CheckpointMeta,
    /// `(name, trainable, tensor)` in store order.
    pub tensors: Vec<(String, Tensor<F>)>,
    pub adam_step: u64,
}

// ── CRC32 (IEEE 802.3), table-driven ────────────────────────────────

fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

pub fn crc32(bytes: &[u8]) -> u32 {
    let table = crc32_table();
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

// ── serialization ───────────────────────────────────────────────────

fn push_tensor<F: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<F>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(match F::DTYPE {
        Dtype::F32 => 0u8,
        Dtype::F64 => 1u8,
    });
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes_vec());
    }
}

/// Serialize params plus optimizer state.
pub fn encode<F: Scalar>(
    meta: &CheckpointMeta,
    store: &ParamStore<F>,
    adam: &AdamState<F>,
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(meta).context("encoding checkpoint meta")?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);

    let mut tensors: Vec<(String, Tensor<F>)> = Vec::new();
    for (_, entry) in store.iter() {
        tensors.push((entry.name.clone(), entry.value.clone()));
    }
    for (idx, slot) in adam.moments.iter().enumerate() {
        if let Some((m, v)) = slot {
            let name = &store.get(ctxseg_core::ParamId(idx)).name;
            tensors.push((format!("adam.m.{name}"), m.clone()));
            tensors.push((format!("adam.v.{name}"), v.clone()));
        }
    }
    tensors.push(("adam.t".to_string(), Tensor::from_vec(vec![1], vec![F::from_f64(adam.step as f64)])?));

    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        push_tensor(&mut out, name, t);
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save<F: Scalar>(
    path: &Path,
    meta: &CheckpointMeta,
    store: &ParamStore<F>,
    adam: &AdamState<F>,
) -> Result<()> {
    let bytes = encode(meta, store, adam)?;
    fs::write(path, bytes).with_context(|| format!("writing checkpoint {}", path.display()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            bail!("truncated checkpoint: needed {n} bytes at offset {}", self.pos);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode<F: Scalar>(bytes: &[u8]) -> Result<Checkpoint<F>> {
    if bytes.len() < 12 {
        bail!("truncated checkpoint: {} bytes", bytes.len());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32(body);
    if stored_crc != actual {
        bail!("checksum failure: stored {stored_crc:08x}, computed {actual:08x}");
    }

    let mut r = Reader { bytes: body, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        bail!("bad magic {:?} (not a checkpoint)", String::from_utf8_lossy(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!("unsupported checkpoint version {version} (supported: {VERSION})");
    }
    let json_len = r.u64()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(json_len)?).context("decoding checkpoint meta")?;

    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    let mut adam_step = 0u64;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .context("non-utf8 tensor name")?;
        let dtype = r.u8()?;
        let expected = match F::DTYPE {
            Dtype::F32 => 0u8,
            Dtype::F64 => 1u8,
        };
        if dtype != expected {
            bail!("tensor {name:?} has dtype tag {dtype}, expected {expected}");
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let width = F::DTYPE.byte_width();
        let payload = r.take(numel * width)?;
        let data: Vec<F> =
            payload.chunks_exact(width).map(|c| F::from_le_slice(c)).collect();
        let tensor = Tensor::from_vec(shape, data).map_err(anyhow::Error::from)?;
        if name == "adam.t" {
            adam_step = tensor.data()[0].as_f64() as u64;
        }
        tensors.push((name, tensor));
    }
    if r.pos != body.len() {
        bail!("trailing bytes after tensor table");
    }
    Ok(Checkpoint { meta, tensors, adam_step })
}

pub fn load<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let bytes =
        fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    decode(&bytes)
}

/// Copy checkpoint tensors into a freshly built store (and optimizer),
/// validating that names and shapes line up exactly.
pub fn restore_into<F: Scalar>(
    ckpt: &Checkpoint<F>,
    store: &mut ParamStore<F>,
    adam: &mut AdamState<F>,
) -> Result<()> {
    use std::collections::BTreeMap;
    let mut by_name: BTreeMap<&str, &Tensor<F>> = BTreeMap::new();
    for (name, t) in &ckpt.tensors {
        by_name.insert(name.as_str(), t);
    }
    let ids: Vec<_> = store.iter().map(|(id, e)| (id, e.name.clone())).collect();
    for (id, name) in &ids {
        let t = by_name
            .remove(name.as_str())
            .with_context(|| format!("checkpoint is missing parameter {name:?}"))?;
        if t.shape() != store.get(*id).value.shape() {
            bail!(
                "parameter {name:?} shape {:?} does not match the model {:?}",
                t.shape(),
                store.get(*id).value.shape()
            );
        }
        store.set_value(*id, t.clone());
        if let Some((m, v)) = adam.moments[id.0].as_mut() {
            if let Some(mt) = by_name.remove(format!("adam.m.{name}").as_str()) {
                *m = mt.clone();
            }
            if let Some(vt) = by_name.remove(format!("adam.v.{name}").as_str()) {
                *v = vt.clone();
            }
        } else {
            by_name.remove(format!("adam.m.{name}").as_str());
            by_name.remove(format!("adam.v.{name}").as_str());
        }
    }
    by_name.remove("adam.t");
    if let Some((name, _)) = by_name.into_iter().next() {
        bail!("checkpoint tensor {name:?} has no matching model parameter");
    }
    adam.step = ckpt.adam_step;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc32_known_vector() {
        // standard test vector
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }
}
