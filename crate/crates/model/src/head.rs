//! Per-pixel classification heads.
//!
//! [`SegHead`] projects visual features into the embedding space and
//! scores each cell against per-class embedding rows (channel 0 is a
//! learned background prototype, so channel c matches mask value c).
//! [`LinearHead`] is the plain baseline classifier.

use ctxseg_core::{fnv1a64, ParamId, ParamStore, Rng, Scalar, Session, Tensor, Var};

use crate::Result;

pub struct SegHead {
    proj_w: ParamId,
    proj_b: ParamId,
    background: ParamId,
}

impl SegHead {
    pub fn new<F: Scalar>(
        visual_width: usize,
        embed_dim: usize,
        store: &mut ParamStore<F>,
        rng: &Rng,
        prefix: &str,
    ) -> Result<Self> {
        let mut r = rng.derive(fnv1a64(prefix.as_bytes()));
        let proj_w = store.add(
            format!("{prefix}.proj.w"),
            ctxseg_core::init::xavier_uniform(
                vec![visual_width, embed_dim],
                visual_width,
                embed_dim,
                &mut r,
            ),
            true,
        )?;
        let proj_b = store.add(format!("{prefix}.proj.b"), Tensor::zeros(vec![embed_dim]), true)?;
        let background = store.add(
            format!("{prefix}.background"),
            ctxseg_core::init::normal(vec![1, embed_dim], 0.1, &mut r),
            true,
        )?;
        Ok(Self { proj_w, proj_b, background })
    }

    /// `logit[cell, c] = <proj(features[cell]), rows[c]>` with the learned
    /// background prototype prepended as channel 0.
    pub fn forward<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        features: Var,
        class_rows: Var,
    ) -> Result<Var> {
        let tape = sess.tape();
        let projected = tape.add_bias(
            tape.matmul(features, sess.var(self.proj_w))?,
            sess.var(self.proj_b),
        )?;
        let prototypes = tape.concat_rows(&[sess.var(self.background), class_rows])?;
        Ok(tape.matmul(projected, tape.transpose(prototypes)?)?)
    }
}

pub struct LinearHead {
    w: ParamId,
    b: ParamId,
}

impl LinearHead {
    pub fn new<F: Scalar>(
        visual_width: usize,
        channels: usize,
        store: &mut ParamStore<F>,
        rng: &Rng,
        prefix: &str,
    ) -> Result<Self> {
        let mut r = rng.derive(fnv1a64(prefix.as_bytes()));
        let w = store.add(
            format!("{prefix}.w"),
            ctxseg_core::init::xavier_uniform(
                vec![visual_width, channels],
                visual_width,
                channels,
                &mut r,
            ),
            true,
        )?;
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(vec![channels]), true)?;
        Ok(Self { w, b })
    }

    pub fn forward<F: Scalar>(&self, sess: &Session<'_, '_, F>, features: Var) -> Result<Var> {
        let tape = sess.tape();
        Ok(tape.add_bias(tape.matmul(features, sess.var(self.w))?, sess.var(self.b))?)
    }
}
