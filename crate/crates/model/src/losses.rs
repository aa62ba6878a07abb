//! Training objective: pixel cross-entropy plus a margin-based pairwise
//! contrastive term over per-class embeddings, combined as
//! `L = L_ce + lambda * L_contrastive`.

use ctxseg_core::{Scalar, Session, Tape, Var};
use ctxseg_data::Mask;
use serde::{Deserialize, Serialize};

use crate::embeddings::SimilarityPairs;
use crate::error::ModelError;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Contrastive weighting factor.
    pub lambda: f64,
    /// Margin for negative pairs.
    pub margin: f64,
    /// Optional per-channel class weights for the cross-entropy term.
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.1, margin: 1.0, class_weights: None }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(ModelError::Config("lambda must be nonnegative".into()));
        }
        if self.margin <= 0.0 {
            return Err(ModelError::Config("margin must be positive".into()));
        }
        Ok(())
    }
}

/// Mean over pixels of `-log softmax(logits)[true class]`. Logit channel c
/// corresponds to mask value c.
pub fn cross_entropy_loss<F: Scalar>(
    sess: &Session<'_, '_, F>,
    logits: Var,
    mask: &Mask,
    cfg: &LossConfig,
) -> Result<Var> {
    let targets: Vec<usize> = mask.data.iter().map(|&v| v as usize).collect();
    let weights: Option<Vec<F>> = cfg
        .class_weights
        .as_ref()
        .map(|w| w.iter().map(|&x| F::from_f64(x)).collect());
    Ok(sess.tape().cross_entropy(logits, &targets, weights.as_deref())?)
}

/// Unit-normalized Euclidean distance between two embedding row vars.
fn normalized_distance<F: Scalar>(tape: &Tape<F>, a: Var, b: Var) -> Result<(Var, Var)> {
    let unit = |v: Var| -> Result<Var> {
        let sq = tape.mul(v, v)?;
        let norm = tape.sqrt(tape.sum(sq)?)?;
        Ok(tape.mul_scalar_var(v, tape.recip(norm)?)?)
    };
    let ua = unit(a)?;
    let ub = unit(b)?;
    let diff = tape.sub(ua, ub)?;
    let sq_dist = tape.sum(tape.mul(diff, diff)?)?;
    let dist = tape.sqrt(tape.add_scalar(sq_dist, F::from_f64(1e-12))?)?;
    Ok((sq_dist, dist))
}

/// Pairwise margin loss over class-embedding rows:
/// `mean over pairs of y*d^2 + (1-y)*max(0, m-d)^2`, `d` the Euclidean
/// distance of L2-normalized embeddings, `y = 1` for positive pairs.
/// `rows` holds `(class_index, (1, d) var)` entries; every listed pair of
/// classes participates, positives per `pairs`, the rest negative.
pub fn contrastive_loss<F: Scalar>(
    sess: &Session<'_, '_, F>,
    rows: &[(usize, Var)],
    pairs: &SimilarityPairs,
    cfg: &LossConfig,
) -> Result<Var> {
    let tape = sess.tape();
    let mut terms: Vec<Var> = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (ca, va) = rows[i];
            let (cb, vb) = rows[j];
            let (sq_dist, dist) = normalized_distance(tape, va, vb)?;
            if pairs.is_positive(ca, cb) {
                terms.push(sq_dist);
            } else {
                let neg = tape.add_scalar(tape.scale(dist, -F::one())?, F::from_f64(cfg.margin))?;
                let hinge = tape.relu(neg)?;
                terms.push(tape.mul(hinge, hinge)?);
            }
        }
    }
    if terms.is_empty() {
        return Err(ModelError::NoPairs);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(tape.scale(total, F::from_f64(1.0 / terms.len() as f64))?)
}

/// `L = L_ce + lambda * L_contrastive`.
pub fn total_loss<F: Scalar>(
    tape: &Tape<F>,
    l_ce: Var,
    l_contrastive: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let weighted = tape.scale(l_contrastive, F::from_f64(cfg.lambda))?;
    Ok(tape.add(l_ce, weighted)?)
}
