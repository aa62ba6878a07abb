//! Hierarchical windowed-attention encoder.
//!
//! The image is cut into patches, linearly embedded, and passed through
//! stages of window-local self-attention blocks; between stages a patch
//! merge halves the grid and widens the channels. Odd blocks shift their
//! window grid by half a window with zero padding, which mixes information
//! across window borders without cyclic-shift masking.

use ctxseg_core::{fnv1a64, ParamId, ParamStore, Rng, Scalar, Session, Tensor, Var};
use ctxseg_data::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::Result;

/// Spatial grid of feature vectors: `values` has shape `(h*w, c)`.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub values: Var,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub patch_size: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub window: usize,
    pub heads: usize,
    #[serde(default = "default_true")]
    pub rel_pos_bias: bool,
    #[serde(default = "default_ff_mult")]
    pub ff_mult: usize,
}

fn default_true() -> bool {
    true
}

fn default_ff_mult() -> usize {
    2
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl BackboneConfig {
    /// Desk default: two stages of widths (32, 64), two blocks each,
    /// window 4, four heads.
    pub fn desk() -> Self {
        Self {
            patch_size: 4,
            stage_widths: vec![32, 64],
            blocks_per_stage: 2,
            window: 4,
            heads: 4,
            rel_pos_bias: true,
            ff_mult: 2,
        }
    }

    /// Single tiny stage; used by gradient checks and fixtures.
    pub fn tiny() -> Self {
        Self {
            patch_size: 4,
            stage_widths: vec![8],
            blocks_per_stage: 1,
            window: 2,
            heads: 2,
            rel_pos_bias: true,
            ff_mult: 2,
        }
    }

    pub fn stages(&self) -> usize {
        self.stage_widths.len()
    }

    /// Total downsampling factor from image to final grid.
    pub fn reduction(&self) -> usize {
        self.patch_size << (self.stages() - 1)
    }

    pub fn validate(&self, image_w: u32, image_h: u32) -> Result<()> {
        if self.stage_widths.is_empty() {
            return Err(ModelError::Config("at least one stage required".into()));
        }
        if self.patch_size == 0 || self.window == 0 || self.heads == 0 || self.blocks_per_stage == 0
        {
            return Err(ModelError::Config("zero-sized backbone dimension".into()));
        }
        for &c in &self.stage_widths {
            if c % self.heads != 0 {
                return Err(ModelError::Config(format!(
                    "stage width {c} not divisible by {} heads",
                    self.heads
                )));
            }
        }
        let (iw, ih) = (image_w as usize, image_h as usize);
        if iw % self.patch_size != 0 || ih % self.patch_size != 0 {
            return Err(ModelError::Config(format!(
                "image {iw}x{ih} not divisible by patch size {}",
                self.patch_size
            )));
        }
        let (mut gw, mut gh) = (iw / self.patch_size, ih / self.patch_size);
        for s in 0..self.stages() {
            if gw % self.window != 0 || gh % self.window != 0 {
                return Err(ModelError::Config(format!(
                    "stage {s} grid {gw}x{gh} not divisible by window {}",
                    self.window
                )));
            }
            if s + 1 < self.stages() {
                if gw % 2 != 0 || gh % 2 != 0 {
                    return Err(ModelError::Config(format!(
                        "stage {s} grid {gw}x{gh} has odd extents, cannot merge"
                    )));
                }
                gw /= 2;
                gh /= 2;
            }
        }
        Ok(())
    }
}

struct BlockParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    /// One relative-position table per head, shape `((2w-1)^2, 1)`.
    rel_pos: Vec<ParamId>,
}

struct StageParams {
    blocks: Vec<BlockParams>,
    /// Merge projection into the next stage, absent for the last stage.
    merge_w: Option<ParamId>,
    merge_b: Option<ParamId>,
}

pub struct Backbone {
    cfg: BackboneConfig,
    patch_w: ParamId,
    patch_b: ParamId,
    stages: Vec<StageParams>,
}

fn named_rng(rng: &Rng, name: &str) -> Rng {
    rng.derive(fnv1a64(name.as_bytes()))
}

fn add_linear<F: Scalar>(
    store: &mut ParamStore<F>,
    rng: &Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<(ParamId, ParamId)> {
    let mut r = named_rng(rng, name);
    let w = store.add(
        format!("{name}.w"),
        ctxseg_core::init::xavier_uniform(vec![fan_in, fan_out], fan_in, fan_out, &mut r),
        true,
    )?;
    let b = store.add(format!("{name}.b"), Tensor::zeros(vec![fan_out]), true)?;
    Ok((w, b))
}

fn add_layer_norm<F: Scalar>(
    store: &mut ParamStore<F>,
    name: &str,
    dim: usize,
) -> Result<(ParamId, ParamId)> {
    let g = store.add(format!("{name}.g"), Tensor::filled(vec![dim], F::one())?, true)?;
    let b = store.add(format!("{name}.b"), Tensor::zeros(vec![dim]), true)?;
    Ok((g, b))
}

impl Backbone {
    pub fn new<F: Scalar>(
        cfg: BackboneConfig,
        store: &mut ParamStore<F>,
        rng: &Rng,
        prefix: &str,
    ) -> Result<Self> {
        let p = cfg.patch_size;
        let c0 = cfg.stage_widths[0];
        let (patch_w, patch_b) =
            add_linear(store, rng, &format!("{prefix}.patch"), p * p * 3, c0)?;

        let table = (2 * cfg.window - 1) * (2 * cfg.window - 1);
        let mut stages = Vec::new();
        for (s, &c) in cfg.stage_widths.iter().enumerate() {
            let mut blocks = Vec::new();
            for b in 0..cfg.blocks_per_stage {
                let base = format!("{prefix}.s{s}.b{b}");
                let (wq, bq) = add_linear(store, rng, &format!("{base}.q"), c, c)?;
                let (wk, bk) = add_linear(store, rng, &format!("{base}.k"), c, c)?;
                let (wv, bv) = add_linear(store, rng, &format!("{base}.v"), c, c)?;
                let (wo, bo) = add_linear(store, rng, &format!("{base}.o"), c, c)?;
                let (ln1_g, ln1_b) = add_layer_norm(store, &format!("{base}.ln1"), c)?;
                let (ff1_w, ff1_b) =
                    add_linear(store, rng, &format!("{base}.ff1"), c, cfg.ff_mult * c)?;
                let (ff2_w, ff2_b) =
                    add_linear(store, rng, &format!("{base}.ff2"), cfg.ff_mult * c, c)?;
                let (ln2_g, ln2_b) = add_layer_norm(store, &format!("{base}.ln2"), c)?;
                let mut rel_pos = Vec::new();
                for h in 0..cfg.heads {
                    rel_pos.push(store.add(
                        format!("{base}.relpos{h}"),
                        Tensor::zeros(vec![table, 1]),
                        true,
                    )?);
                }
                blocks.push(BlockParams {
                    wq, bq, wk, bk, wv, bv, wo, bo,
                    ln1_g, ln1_b, ff1_w, ff1_b, ff2_w, ff2_b, ln2_g, ln2_b,
                    rel_pos,
                });
            }
            let (merge_w, merge_b) = if s + 1 < cfg.stages() {
                let next = cfg.stage_widths[s + 1];
                let (w, b) = add_linear(store, rng, &format!("{prefix}.s{s}.merge"), 4 * c, next)?;
                (Some(w), Some(b))
            } else {
                (None, None)
            };
            stages.push(StageParams { blocks, merge_w, merge_b });
        }
        Ok(Self { cfg, patch_w, patch_b, stages })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    /// Image bytes scaled to [0, 1], one row per pixel.
    pub fn image_tensor<F: Scalar>(img: &RgbImage) -> Tensor<F> {
        let data = img.data.iter().map(|&b| F::from_f64(b as f64 / 255.0)).collect();
        Tensor::from_vec(vec![(img.width * img.height) as usize, 3], data).expect("finite image")
    }

    /// Flatten each `p x p x 3` patch into one row, row-major over patches.
    fn patch_matrix<F: Scalar>(&self, img: &RgbImage) -> Tensor<F> {
        let p = self.cfg.patch_size;
        let (gw, gh) = (img.width as usize / p, img.height as usize / p);
        let mut data = Vec::with_capacity(gw * gh * p * p * 3);
        for gi in 0..gh {
            for gj in 0..gw {
                for dy in 0..p {
                    for dx in 0..p {
                        let px = img.get((gj * p + dx) as u32, (gi * p + dy) as u32);
                        for ch in 0..3 {
                            data.push(F::from_f64(px[ch] as f64 / 255.0));
                        }
                    }
                }
            }
        }
        Tensor::from_vec(vec![gw * gh, p * p * 3], data).expect("finite patches")
    }

    /// Learned linear projection of each image patch.
    pub fn patch_embed<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        img: &RgbImage,
    ) -> Result<FeatureMap> {
        self.cfg.validate(img.width, img.height)?;
        let p = self.cfg.patch_size;
        let (gw, gh) = (img.width as usize / p, img.height as usize / p);
        let tape = sess.tape();
        let patches = tape.constant(self.patch_matrix::<F>(img));
        let projected = tape.matmul(patches, sess.var(self.patch_w))?;
        let values = tape.add_bias(projected, sess.var(self.patch_b))?;
        Ok(FeatureMap { h: gh, w: gw, c: self.cfg.stage_widths[0], values })
    }

    /// One window-attention block. Odd block indices shift the window grid
    /// by `window/2` with zero padding.
    pub fn attention_block<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        fm: &FeatureMap,
        stage: usize,
        block: usize,
    ) -> Result<FeatureMap> {
        let cfg = &self.cfg;
        let pb = &self.stages[stage].blocks[block];
        let w = cfg.window;
        let offset = if block % 2 == 1 { w / 2 } else { 0 };
        let (h, gw, c) = (fm.h, fm.w, fm.c);
        if h % w != 0 || gw % w != 0 {
            return Err(ModelError::Config(format!(
                "grid {h}x{gw} not divisible by window {w}"
            )));
        }
        let heads = cfg.heads;
        let dh = c / heads;
        let tape = sess.tape();

        let (fwd_idx, inv_idx, batches) = window_maps(h, gw, w, offset);
        let x = fm.values;
        let xw = if offset == 0 {
            let idx: Vec<usize> = fwd_idx.iter().map(|&i| i as usize).collect();
            tape.gather_rows(x, &idx)?
        } else {
            tape.gather_rows_or_zero(x, &fwd_idx)?
        };

        let q = tape.add_bias(tape.matmul(xw, sess.var(pb.wq))?, sess.var(pb.bq))?;
        let k = tape.add_bias(tape.matmul(xw, sess.var(pb.wk))?, sess.var(pb.bk))?;
        let v = tape.add_bias(tape.matmul(xw, sess.var(pb.wv))?, sess.var(pb.bv))?;

        let tokens = w * w;
        let pair_idx = rel_pos_pairs(w);
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let mut head_outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = tape.reshape(tape.slice_cols(q, hd * dh, dh)?, vec![batches, tokens, dh])?;
            let kh = tape.reshape(tape.slice_cols(k, hd * dh, dh)?, vec![batches, tokens, dh])?;
            let vh = tape.reshape(tape.slice_cols(v, hd * dh, dh)?, vec![batches, tokens, dh])?;
            let mut scores = tape.scale(tape.bmm(qh, kh, true)?, scale)?;
            if cfg.rel_pos_bias {
                let table = sess.var(pb.rel_pos[hd]);
                let bias = tape.reshape(
                    tape.gather_rows(table, &pair_idx)?,
                    vec![tokens * tokens],
                )?;
                let flat = tape.reshape(scores, vec![batches, tokens * tokens])?;
                let biased = tape.add_bias(flat, bias)?;
                scores = tape.reshape(biased, vec![batches, tokens, tokens])?;
            }
            let attn = tape.softmax(scores)?;
            let out = tape.bmm(attn, vh, false)?;
            head_outs.push(tape.reshape(out, vec![batches * tokens, dh])?);
        }
        let merged = tape.concat_cols(&head_outs)?;
        let proj = tape.add_bias(tape.matmul(merged, sess.var(pb.wo))?, sess.var(pb.bo))?;
        let back = tape.gather_rows(proj, &inv_idx)?;

        let x1 = tape.layer_norm(
            tape.add(x, back)?,
            sess.var(pb.ln1_g),
            sess.var(pb.ln1_b),
            1e-5,
        )?;
        let hdn = tape.relu(tape.add_bias(
            tape.matmul(x1, sess.var(pb.ff1_w))?,
            sess.var(pb.ff1_b),
        )?)?;
        let ff = tape.add_bias(tape.matmul(hdn, sess.var(pb.ff2_w))?, sess.var(pb.ff2_b))?;
        let x2 = tape.layer_norm(
            tape.add(x1, ff)?,
            sess.var(pb.ln2_g),
            sess.var(pb.ln2_b),
            1e-5,
        )?;
        Ok(FeatureMap { h, w: gw, c, values: x2 })
    }

    /// Halve the grid, concatenating each 2x2 neighborhood and projecting
    /// into the next stage's width.
    pub fn patch_merge<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        fm: &FeatureMap,
        stage: usize,
    ) -> Result<FeatureMap> {
        let (h, w) = (fm.h, fm.w);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(ModelError::Config(format!("cannot merge odd grid {h}x{w}")));
        }
        let sp = &self.stages[stage];
        let (merge_w, merge_b) = match (sp.merge_w, sp.merge_b) {
            (Some(w), Some(b)) => (w, b),
            _ => return Err(ModelError::Config(format!("stage {stage} has no merge"))),
        };
        let tape = sess.tape();
        let (h2, w2) = (h / 2, w / 2);
        let mut corners = Vec::with_capacity(4);
        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let idx: Vec<usize> = (0..h2 * w2)
                .map(|o| {
                    let (i2, j2) = (o / w2, o % w2);
                    (2 * i2 + dy) * w + 2 * j2 + dx
                })
                .collect();
            corners.push(tape.gather_rows(fm.values, &idx)?);
        }
        let cat = tape.concat_cols(&corners)?;
        let projected = tape.matmul(cat, sess.var(merge_w))?;
        let values = tape.add_bias(projected, sess.var(merge_b))?;
        Ok(FeatureMap { h: h2, w: w2, c: self.cfg.stage_widths[stage + 1], values })
    }

    /// Full encoder: patch embed, attention stages with merges between.
    pub fn forward_features<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        img: &RgbImage,
    ) -> Result<FeatureMap> {
        let mut fm = self.patch_embed(sess, img)?;
        for s in 0..self.cfg.stages() {
            for b in 0..self.cfg.blocks_per_stage {
                fm = self.attention_block(sess, &fm, s, b)?;
            }
            if s + 1 < self.cfg.stages() {
                fm = self.patch_merge(sess, &fm, s)?;
            }
        }
        Ok(fm)
    }

    /// Encoder output plus a nearest-neighbor upsampled copy at the label
    /// resolution.
    pub fn forward<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        img: &RgbImage,
    ) -> Result<(FeatureMap, FeatureMap)> {
        let fm = self.forward_features(sess, img)?;
        let factor = self.cfg.reduction();
        let up = sess.tape().upsample_nearest(fm.values, fm.h, fm.w, factor)?;
        let upsampled =
            FeatureMap { h: fm.h * factor, w: fm.w * factor, c: fm.c, values: up };
        Ok((fm, upsampled))
    }
}

/// Forward map (window-token order -> grid row, -1 for padding) and
/// inverse map (grid row -> window-token position). With a nonzero offset
/// the grid is embedded into a `(h+w, gw+w)` zero-padded grid shifted by
/// `offset`, whose window partition is exact.
fn window_maps(h: usize, gw: usize, w: usize, offset: usize) -> (Vec<i64>, Vec<usize>, usize) {
    let (ph, pw) = if offset == 0 { (h, gw) } else { (h + w, gw + w) };
    let (wy, wx) = (ph / w, pw / w);
    let batches = wy * wx;
    let mut fwd = Vec::with_capacity(batches * w * w);
    let mut inv = vec![0usize; h * gw];
    for by in 0..wy {
        for bx in 0..wx {
            for ty in 0..w {
                for tx in 0..w {
                    let (pi, pj) = (by * w + ty, bx * w + tx);
                    let (io, jo) = (pi as i64 - offset as i64, pj as i64 - offset as i64);
                    if io >= 0 && (io as usize) < h && jo >= 0 && (jo as usize) < gw {
                        let row = io as usize * gw + jo as usize;
                        inv[row] = fwd.len();
                        fwd.push(row as i64);
                    } else {
                        fwd.push(-1);
                    }
                }
            }
        }
    }
    (fwd, inv, batches)
}

/// Relative-position table lookups for each ordered token pair of a `w x w`
/// window: index `(dy + w - 1) * (2w - 1) + (dx + w - 1)`.
fn rel_pos_pairs(w: usize) -> Vec<usize> {
    let tokens = w * w;
    let span = 2 * w - 1;
    let mut idx = Vec::with_capacity(tokens * tokens);
    for i in 0..tokens {
        let (iy, ix) = (i / w, i % w);
        for j in 0..tokens {
            let (jy, jx) = (j / w, j % w);
            let dy = iy as i64 - jy as i64 + (w as i64 - 1);
            let dx = ix as i64 - jx as i64 + (w as i64 - 1);
            idx.push((dy as usize) * span + dx as usize);
        }
    }
    idx
}
