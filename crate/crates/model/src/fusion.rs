//! Vision-language fusion: multi-head cross-attention with visual cells as
//! queries and label embeddings as keys and values.

use ctxseg_core::{fnv1a64, ParamId, ParamStore, Rng, Scalar, Session, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::backbone::FeatureMap;
use crate::error::ModelError;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub heads: usize,
    /// Residual connection plus layer norm around the attention output;
    /// disabled by the arithmetic oracle tests.
    #[serde(default = "default_true")]
    pub residual_norm: bool,
}

fn default_true() -> bool {
    true
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { heads: 4, residual_norm: true }
    }
}

/// Per-cell, per-head attention over labels; rows sum to one.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub h: usize,
    pub w: usize,
    pub heads: usize,
    pub labels: usize,
    /// Indexed `((cell * heads) + head) * labels + label`.
    pub values: Vec<f64>,
}

impl AttentionWeights {
    pub fn get(&self, row: usize, col: usize, head: usize, label: usize) -> f64 {
        let cell = row * self.w + col;
        self.values[(cell * self.heads + head) * self.labels + label]
    }
}

pub struct CrossAttention {
    cfg: FusionConfig,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
    width: usize,
}

impl CrossAttention {
    pub fn new<F: Scalar>(
        cfg: FusionConfig,
        visual_width: usize,
        embed_dim: usize,
        store: &mut ParamStore<F>,
        rng: &Rng,
        prefix: &str,
    ) -> Result<Self> {
        if visual_width % cfg.heads != 0 {
            return Err(ModelError::Config(format!(
                "fusion width {visual_width} not divisible by {} heads",
                cfg.heads
            )));
        }
        let lin = |store: &mut ParamStore<F>, name: String, fi: usize, fo: usize| -> Result<(ParamId, ParamId)> {
            let mut r = rng.derive(fnv1a64(name.as_bytes()));
            let w = store.add(
                format!("{name}.w"),
                ctxseg_core::init::xavier_uniform(vec![fi, fo], fi, fo, &mut r),
                true,
            )?;
            let b = store.add(format!("{name}.b"), Tensor::zeros(vec![fo]), true)?;
            Ok((w, b))
        };
        let (wq, bq) = lin(store, format!("{prefix}.q"), visual_width, visual_width)?;
        let (wk, bk) = lin(store, format!("{prefix}.k"), embed_dim, visual_width)?;
        let (wv, bv) = lin(store, format!("{prefix}.v"), embed_dim, visual_width)?;
        let (wo, bo) = lin(store, format!("{prefix}.o"), visual_width, visual_width)?;
        let ln_g = store.add(format!("{prefix}.ln.g"), Tensor::filled(vec![visual_width], F::one())?, true)?;
        let ln_b = store.add(format!("{prefix}.ln.b"), Tensor::zeros(vec![visual_width]), true)?;
        Ok(Self { cfg, wq, bq, wk, bk, wv, bv, wo, bo, ln_g, ln_b, width: visual_width })
    }

    /// Fused feature map and the attention weights that produced it. Both
    /// outputs come from one shared pass, so the weights match the fused
    /// map bit-for-bit.
    pub fn forward<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        fm: &FeatureMap,
        labels: Var,
    ) -> Result<(FeatureMap, AttentionWeights)> {
        if fm.c != self.width {
            return Err(ModelError::Config(format!(
                "feature width {} does not match fusion width {}",
                fm.c, self.width
            )));
        }
        let tape = sess.tape();
        let n_labels = tape.shape(labels)[0];
        let heads = self.cfg.heads;
        let dh = self.width / heads;
        let cells = fm.h * fm.w;

        let q = tape.add_bias(tape.matmul(fm.values, sess.var(self.wq))?, sess.var(self.bq))?;
        let k = tape.add_bias(tape.matmul(labels, sess.var(self.wk))?, sess.var(self.bk))?;
        let v = tape.add_bias(tape.matmul(labels, sess.var(self.wv))?, sess.var(self.bv))?;

        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let mut head_outs = Vec::with_capacity(heads);
        let mut weights = vec![0.0f64; cells * heads * n_labels];
        for hd in 0..heads {
            let qh = tape.slice_cols(q, hd * dh, dh)?;
            let kh = tape.slice_cols(k, hd * dh, dh)?;
            let vh = tape.slice_cols(v, hd * dh, dh)?;
            let scores = tape.scale(tape.matmul(qh, tape.transpose(kh)?)?, scale)?;
            let attn = tape.softmax(scores)?;
            let attn_data = tape.value(attn);
            for cell in 0..cells {
                for l in 0..n_labels {
                    weights[(cell * heads + hd) * n_labels + l] =
                        attn_data.data()[cell * n_labels + l].as_f64();
                }
            }
            head_outs.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_cols(&head_outs)?;
        let mut out = tape.add_bias(tape.matmul(merged, sess.var(self.wo))?, sess.var(self.bo))?;
        if self.cfg.residual_norm {
            out = tape.layer_norm(
                tape.add(fm.values, out)?,
                sess.var(self.ln_g),
                sess.var(self.ln_b),
                1e-5,
            )?;
        }
        Ok((
            FeatureMap { h: fm.h, w: fm.w, c: fm.c, values: out },
            AttentionWeights { h: fm.h, w: fm.w, heads, labels: n_labels, values: weights },
        ))
    }

    /// Pre-softmax logits per head; diagnostic surface for the scaling
    /// tests and weight dumps.
    pub fn pre_softmax_logits<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        fm: &FeatureMap,
        labels: Var,
    ) -> Result<Vec<Tensor<F>>> {
        let tape = sess.tape();
        let heads = self.cfg.heads;
        let dh = self.width / heads;
        let q = tape.add_bias(tape.matmul(fm.values, sess.var(self.wq))?, sess.var(self.bq))?;
        let k = tape.add_bias(tape.matmul(labels, sess.var(self.wk))?, sess.var(self.bk))?;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let mut out = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = tape.slice_cols(q, hd * dh, dh)?;
            let kh = tape.slice_cols(k, hd * dh, dh)?;
            let scores = tape.scale(tape.matmul(qh, tape.transpose(kh)?)?, scale)?;
            out.push(tape.value(scores));
        }
        Ok(out)
    }
}
