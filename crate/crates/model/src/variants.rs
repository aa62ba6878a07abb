//! Model variants behind a common trait, registered by name.
//!
//! The four incremental configurations are selected at runtime via config
//! or CLI: `baseline` (encoder + linear per-pixel classifier), `llm`
//! (head scores against projected label embeddings), `xattn` (adds
//! cross-attention fusion) and `gnn` (adds scene-graph refinement of the
//! class embeddings). Each variant owns only the components its forward
//! path uses, so gating is structural; stage op counts from the tape
//! verify it dynamically.

use ctxseg_core::{ParamId, ParamStore, Rng, Scalar, Session, Tensor, Var};
use ctxseg_data::{Mask, RgbImage, Vocab};
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::embeddings::LabelEmbeddingSet;
use crate::error::ModelError;
use crate::fusion::{AttentionWeights, CrossAttention, FusionConfig};
use crate::gnn::{build_scene_graph, GnnConfig, MessagePassing, SceneGraph};
use crate::head::{LinearHead, SegHead};
use crate::Result;

pub const VARIANT_NAMES: [&str; 4] = ["baseline", "llm", "xattn", "gnn"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub fusion: FusionConfig,
    pub gnn: GnnConfig,
    /// When set, the label-embedding table is optimized during training.
    #[serde(default)]
    pub embeddings_trainable: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::desk(),
            fusion: FusionConfig::default(),
            gnn: GnnConfig::default(),
            embeddings_trainable: false,
        }
    }
}

/// Where the scene graph comes from: none (graph-free pass), or built from
/// a mask (ground truth during training, the first-pass argmax at
/// inference).
pub enum GraphSource<'a> {
    None,
    Mask(&'a Mask),
}

pub struct ForwardInput<'a> {
    pub image: &'a RgbImage,
    pub graph: GraphSource<'a>,
}

/// Tape-op counts recorded per pipeline stage during one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageOps {
    pub backbone: usize,
    pub fusion: usize,
    pub graph: usize,
    pub head: usize,
}

pub struct ForwardOutput {
    /// `(label_h * label_w, channels)` logits at label resolution.
    pub logits: Var,
    pub label_h: usize,
    pub label_w: usize,
    pub attention: Option<AttentionWeights>,
    /// Refined per-class embedding rows `(class_index, (1, d) var)` for
    /// classes present in the graph; feeds the contrastive term.
    pub class_rows: Option<Vec<(usize, Var)>>,
    pub graph: Option<SceneGraph>,
    pub stage_ops: StageOps,
}

pub trait Variant<F: Scalar> {
    fn name(&self) -> &'static str;
    /// Whether inference needs the two-pass graph protocol.
    fn uses_graph(&self) -> bool {
        false
    }
    fn forward(&self, sess: &Session<'_, '_, F>, input: &ForwardInput<'_>) -> Result<ForwardOutput>;
}

/// Name-based factory covering every ablation row.
pub fn build_variant<F: Scalar>(
    name: &str,
    cfg: &ModelConfig,
    vocab: &Vocab,
    embeddings: &LabelEmbeddingSet,
    store: &mut ParamStore<F>,
    rng: &Rng,
) -> Result<Box<dyn Variant<F>>> {
    match name {
        "baseline" => Ok(Box::new(BaselineVariant::new(cfg, vocab, store, rng)?)),
        "llm" => Ok(Box::new(LlmVariant::new(cfg, vocab, embeddings, store, rng)?)),
        "xattn" => Ok(Box::new(XattnVariant::new(cfg, vocab, embeddings, store, rng)?)),
        "gnn" => Ok(Box::new(GnnVariant::new(cfg, vocab, embeddings, store, rng)?)),
        other => Err(ModelError::UnknownVariant(other.to_string())),
    }
}

fn add_embedding_table<F: Scalar>(
    cfg: &ModelConfig,
    embeddings: &LabelEmbeddingSet,
    vocab: &Vocab,
    store: &mut ParamStore<F>,
) -> Result<ParamId> {
    if embeddings.vectors.len() != vocab.len() {
        return Err(ModelError::Config(format!(
            "{} embeddings for {} labels",
            embeddings.vectors.len(),
            vocab.len()
        )));
    }
    let data: Vec<F> = embeddings.flat().iter().map(|&v| F::from_f64(v)).collect();
    let table = Tensor::from_vec(vec![vocab.len(), embeddings.dim], data)?;
    Ok(store.add("embeddings.table", table, cfg.embeddings_trainable)?)
}

// ── baseline ────────────────────────────────────────────────────────

pub struct BaselineVariant {
    backbone: Backbone,
    head: LinearHead,
}

impl BaselineVariant {
    fn new<F: Scalar>(
        cfg: &ModelConfig,
        vocab: &Vocab,
        store: &mut ParamStore<F>,
        rng: &Rng,
    ) -> Result<Self> {
        let backbone = Backbone::new(cfg.backbone.clone(), store, rng, "backbone")?;
        let width = *cfg.backbone.stage_widths.last().unwrap();
        let head = LinearHead::new(width, vocab.channels(), store, rng, "head.linear")?;
        Ok(Self { backbone, head })
    }
}

impl<F: Scalar> Variant<F> for BaselineVariant {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn forward(&self, sess: &Session<'_, '_, F>, input: &ForwardInput<'_>) -> Result<ForwardOutput> {
        let tape = sess.tape();
        let mut ops = StageOps::default();

        let before = tape.op_count();
        let fm = self.backbone.forward_features(sess, input.image)?;
        ops.backbone = tape.op_count() - before;

        let before = tape.op_count();
        let logits_low = self.head.forward(sess, fm.values)?;
        let factor = self.backbone.config().reduction();
        let logits = tape.upsample_nearest(logits_low, fm.h, fm.w, factor)?;
        ops.head = tape.op_count() - before;

        Ok(ForwardOutput {
            logits,
            label_h: fm.h * factor,
            label_w: fm.w * factor,
            attention: None,
            class_rows: None,
            graph: None,
            stage_ops: ops,
        })
    }
}

// ── llm: scores against projected label embeddings ──────────────────

pub struct LlmVariant {
    backbone: Backbone,
    table: ParamId,
    head: SegHead,
}

impl LlmVariant {
    fn new<F: Scalar>(
        cfg: &ModelConfig,
        vocab: &Vocab,
        embeddings: &LabelEmbeddingSet,
        store: &mut ParamStore<F>,
        rng: &Rng,
    ) -> Result<Self> {
        let backbone = Backbone::new(cfg.backbone.clone(), store, rng, "backbone")?;
        let width = *cfg.backbone.stage_widths.last().unwrap();
        let table = add_embedding_table(cfg, embeddings, vocab, store)?;
        let head = SegHead::new(width, embeddings.dim, store, rng, "head.seg")?;
        Ok(Self { backbone, table, head })
    }
}

impl<F: Scalar> Variant<F> for LlmVariant {
    fn name(&self) -> &'static str {
        "llm"
    }

    fn forward(&self, sess: &Session<'_, '_, F>, input: &ForwardInput<'_>) -> Result<ForwardOutput> {
        let tape = sess.tape();
        let mut ops = StageOps::default();

        let before = tape.op_count();
        let fm = self.backbone.forward_features(sess, input.image)?;
        ops.backbone = tape.op_count() - before;

        let before = tape.op_count();
        let logits_low = self.head.forward(sess, fm.values, sess.var(self.table))?;
        let factor = self.backbone.config().reduction();
        let logits = tape.upsample_nearest(logits_low, fm.h, fm.w, factor)?;
        ops.head = tape.op_count() - before;

        Ok(ForwardOutput {
            logits,
            label_h: fm.h * factor,
            label_w: fm.w * factor,
            attention: None,
            class_rows: None,
            graph: None,
            stage_ops: ops,
        })
    }
}

// ── xattn: adds cross-attention fusion ──────────────────────────────

pub struct XattnVariant {
    backbone: Backbone,
    table: ParamId,
    fusion: CrossAttention,
    head: SegHead,
}

impl XattnVariant {
    fn new<F: Scalar>(
        cfg: &ModelConfig,
        vocab: &Vocab,
        embeddings: &LabelEmbeddingSet,
        store: &mut ParamStore<F>,
        rng: &Rng,
    ) -> Result<Self> {
        let backbone = Backbone::new(cfg.backbone.clone(), store, rng, "backbone")?;
        let width = *cfg.backbone.stage_widths.last().unwrap();
        let table = add_embedding_table(cfg, embeddings, vocab, store)?;
        let fusion =
            CrossAttention::new(cfg.fusion.clone(), width, embeddings.dim, store, rng, "fusion")?;
        let head = SegHead::new(width, embeddings.dim, store, rng, "head.seg")?;
        Ok(Self { backbone, table, fusion, head })
    }
}

impl<F: Scalar> Variant<F> for XattnVariant {
    fn name(&self) -> &'static str {
        "xattn"
    }

    fn forward(&self, sess: &Session<'_, '_, F>, input: &ForwardInput<'_>) -> Result<ForwardOutput> {
        let tape = sess.tape();
        let mut ops = StageOps::default();

        let before = tape.op_count();
        let fm = self.backbone.forward_features(sess, input.image)?;
        ops.backbone = tape.op_count() - before;

        let before = tape.op_count();
        let (fused, attention) = self.fusion.forward(sess, &fm, sess.var(self.table))?;
        ops.fusion = tape.op_count() - before;

        let before = tape.op_count();
        let logits_low = self.head.forward(sess, fused.values, sess.var(self.table))?;
        let factor = self.backbone.config().reduction();
        let logits = tape.upsample_nearest(logits_low, fused.h, fused.w, factor)?;
        ops.head = tape.op_count() - before;

        Ok(ForwardOutput {
            logits,
            label_h: fused.h * factor,
            label_w: fused.w * factor,
            attention: Some(attention),
            class_rows: None,
            graph: None,
            stage_ops: ops,
        })
    }
}

// ── gnn: adds scene-graph refinement of class embeddings ────────────

pub struct GnnVariant {
    backbone: Backbone,
    table: ParamId,
    fusion: CrossAttention,
    message_passing: MessagePassing,
    head: SegHead,
    gnn_cfg: GnnConfig,
    vocab_len: usize,
}

impl GnnVariant {
    fn new<F: Scalar>(
        cfg: &ModelConfig,
        vocab: &Vocab,
        embeddings: &LabelEmbeddingSet,
        store: &mut ParamStore<F>,
        rng: &Rng,
    ) -> Result<Self> {
        let backbone = Backbone::new(cfg.backbone.clone(), store, rng, "backbone")?;
        let width = *cfg.backbone.stage_widths.last().unwrap();
        let table = add_embedding_table(cfg, embeddings, vocab, store)?;
        let fusion =
            CrossAttention::new(cfg.fusion.clone(), width, embeddings.dim, store, rng, "fusion")?;
        let message_passing =
            MessagePassing::new(cfg.gnn.clone(), embeddings.dim, store, rng, "gnn")?;
        let head = SegHead::new(width, embeddings.dim, store, rng, "head.seg")?;
        Ok(Self {
            backbone,
            table,
            fusion,
            message_passing,
            head,
            gnn_cfg: cfg.gnn.clone(),
            vocab_len: vocab.len(),
        })
    }

    /// Per-class rows for the head: classes present in the graph use the
    /// mean refined node embedding, absent classes fall back to the raw
    /// table row.
    fn class_rows<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        graph: &SceneGraph,
        refined: Var,
    ) -> Result<(Var, Vec<(usize, Var)>)> {
        let tape = sess.tape();
        let table = sess.var(self.table);
        let mut rows = Vec::with_capacity(self.vocab_len);
        let mut present_rows = Vec::new();
        for class in 0..self.vocab_len {
            let nodes: Vec<usize> = graph
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.class_index == class)
                .map(|(i, _)| i)
                .collect();
            if nodes.is_empty() {
                rows.push(tape.gather_rows(table, &[class])?);
            } else {
                let members = tape.gather_rows(refined, &nodes)?;
                let w = F::from_f64(1.0 / nodes.len() as f64);
                let pool = tape.constant(Tensor::filled(vec![1, nodes.len()], w)?);
                let mean = tape.matmul(pool, members)?;
                rows.push(mean);
                present_rows.push((class, mean));
            }
        }
        Ok((tape.concat_rows(&rows)?, present_rows))
    }
}

impl<F: Scalar> Variant<F> for GnnVariant {
    fn name(&self) -> &'static str {
        "gnn"
    }

    fn uses_graph(&self) -> bool {
        true
    }

    fn forward(&self, sess: &Session<'_, '_, F>, input: &ForwardInput<'_>) -> Result<ForwardOutput> {
        let tape = sess.tape();
        let mut ops = StageOps::default();

        let before = tape.op_count();
        let fm = self.backbone.forward_features(sess, input.image)?;
        ops.backbone = tape.op_count() - before;

        let before = tape.op_count();
        let (fused, attention) = self.fusion.forward(sess, &fm, sess.var(self.table))?;
        ops.fusion = tape.op_count() - before;

        let before = tape.op_count();
        let (class_rows, present_rows, graph) = match &input.graph {
            GraphSource::Mask(mask) => {
                let vocab_stub = vocab_of_len(self.vocab_len);
                let graph = build_scene_graph(mask, &vocab_stub, &self.gnn_cfg)?;
                if graph.is_empty() {
                    (sess.var(self.table), Vec::new(), Some(graph))
                } else {
                    let classes: Vec<usize> =
                        graph.nodes.iter().map(|n| n.class_index).collect();
                    let init = tape.gather_rows(sess.var(self.table), &classes)?;
                    let refined = self.message_passing.forward(sess, &graph, init)?;
                    let (rows, present) = self.class_rows(sess, &graph, refined)?;
                    (rows, present, Some(graph))
                }
            }
            GraphSource::None => (sess.var(self.table), Vec::new(), None),
        };
        ops.graph = tape.op_count() - before;

        let before = tape.op_count();
        let logits_low = self.head.forward(sess, fused.values, class_rows)?;
        let factor = self.backbone.config().reduction();
        let logits = tape.upsample_nearest(logits_low, fused.h, fused.w, factor)?;
        ops.head = tape.op_count() - before;

        Ok(ForwardOutput {
            logits,
            label_h: fused.h * factor,
            label_w: fused.w * factor,
            attention: Some(attention),
            class_rows: if present_rows.is_empty() { None } else { Some(present_rows) },
            graph,
            stage_ops: ops,
        })
    }
}

/// Anonymous vocabulary of the right size, for mask-value validation when
/// building graphs from predicted masks.
fn vocab_of_len(n: usize) -> Vocab {
    Vocab::new((0..n).map(|i| format!("class{i}")).collect()).expect("synthetic vocab")
}
