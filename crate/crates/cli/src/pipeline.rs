//! Shared glue: building a variant from config, running inference passes
//! and scoring splits.

use anyhow::{Context, Result};

use ctxseg_core::{ParamStore, Rng, Scalar, Session, Tape, Tensor};
use ctxseg_data::{LoadedSplit, Mask, RgbImage, Vocab};
use ctxseg_model::variants::{build_variant, ForwardInput, GraphSource, Variant};
use ctxseg_model::{
    embed_labels, provider_from_config, AttentionWeights, EvalReport, SceneGraph,
    SegmentationScorer, SimilarityPairs,
};

use crate::config::TrainConfig;

/// RNG stream ids; fixed so every consumer draws from an independent,
/// reproducible stream.
pub const STREAM_INIT: u64 = 0xA;
pub const STREAM_TRAIN: u64 = 0xB;

pub struct BuiltModel<F: Scalar> {
    pub variant: Box<dyn Variant<F>>,
    pub store: ParamStore<F>,
    pub vocab: Vocab,
    pub pairs: SimilarityPairs,
}

/// Resolve the embedding table through the configured provider.
pub fn resolve_embeddings(
    cfg: &TrainConfig,
    vocab: &Vocab,
) -> Result<ctxseg_model::LabelEmbeddingSet> {
    let provider = provider_from_config(&cfg.embeddings)?;
    embed_labels(vocab, provider.as_ref())
        .with_context(|| format!("provider {:?}", cfg.embeddings.provider))
        .map_err(Into::into)
}

/// Construct the configured variant with seeded weights around a resolved
/// embedding set.
pub fn build_model_with<F: Scalar>(
    cfg: &TrainConfig,
    vocab: &Vocab,
    similarity_pairs: &[[String; 2]],
    embeddings: &ctxseg_model::LabelEmbeddingSet,
) -> Result<BuiltModel<F>> {
    let pairs = SimilarityPairs::from_labels(similarity_pairs, vocab)?;
    let mut store = ParamStore::new();
    let rng = Rng::new(cfg.seed, STREAM_INIT);
    let variant = build_variant(&cfg.variant, &cfg.model, vocab, embeddings, &mut store, &rng)?;
    Ok(BuiltModel { variant, store, vocab: vocab.clone(), pairs })
}

/// Provider resolution plus model construction; the training entry point.
pub fn build_model<F: Scalar>(
    cfg: &TrainConfig,
    vocab: &Vocab,
    similarity_pairs: &[[String; 2]],
) -> Result<BuiltModel<F>> {
    let embeddings = resolve_embeddings(cfg, vocab)?;
    build_model_with(cfg, vocab, similarity_pairs, &embeddings)
}

/// Unit-norm placeholder embedding rows of a given dimension; used when a
/// checkpoint is about to overwrite the table anyway, so the provider must
/// not be consulted (it may be a file or remote service that is gone).
pub fn placeholder_embeddings(vocab: &Vocab, dim: usize) -> ctxseg_model::LabelEmbeddingSet {
    let mut vectors = Vec::with_capacity(vocab.len());
    for _ in 0..vocab.len() {
        let mut row = vec![0.0; dim];
        row[0] = 1.0;
        vectors.push(row);
    }
    ctxseg_model::LabelEmbeddingSet {
        dim,
        vectors,
        provenance: ctxseg_model::Provenance::Hashed,
    }
}

pub struct Prediction {
    pub mask: Mask,
    pub confidence: Vec<f64>,
    pub logits: Vec<f64>,
    pub label_h: usize,
    pub label_w: usize,
    pub attention: Option<AttentionWeights>,
    pub graph: Option<SceneGraph>,
}

/// Inference: a graph-free pass, then for graph-refining variants a second
/// pass with the scene graph built from the first pass's argmax.
pub fn predict<F: Scalar>(
    variant: &dyn Variant<F>,
    store: &ParamStore<F>,
    image: &RgbImage,
) -> Result<Prediction> {
    let first = {
        let tape = Tape::new();
        let sess = Session::new(&tape, store);
        let out =
            variant.forward(&sess, &ForwardInput { image, graph: GraphSource::None })?;
        let logits = tape.value(out.logits);
        (logits, out.label_h, out.label_w)
    };
    let (mask1, conf1) = ctxseg_model::decode_predictions(&first.0, first.1, first.2);

    if !variant.uses_graph() {
        return Ok(Prediction {
            mask: mask1,
            confidence: conf1,
            logits: first.0.data().iter().map(|v| v.as_f64()).collect(),
            label_h: first.1,
            label_w: first.2,
            attention: None,
            graph: None,
        });
    }

    let tape = Tape::new();
    let sess = Session::new(&tape, store);
    let out =
        variant.forward(&sess, &ForwardInput { image, graph: GraphSource::Mask(&mask1) })?;
    let logits = tape.value(out.logits);
    let (mask2, conf2) = ctxseg_model::decode_predictions(&logits, out.label_h, out.label_w);
    Ok(Prediction {
        mask: mask2,
        confidence: conf2,
        logits: logits.data().iter().map(|v| v.as_f64()).collect(),
        label_h: out.label_h,
        label_w: out.label_w,
        attention: out.attention,
        graph: out.graph,
    })
}

/// Score a list of samples (two-pass inference where applicable).
pub fn evaluate_samples<F: Scalar>(
    variant: &dyn Variant<F>,
    store: &ParamStore<F>,
    vocab: &Vocab,
    samples: &[ctxseg_data::SampleRecord],
    include_background: bool,
    iou_thresh: f64,
) -> Result<EvalReport> {
    let mut scorer = SegmentationScorer::new(vocab, iou_thresh);
    for sample in samples {
        let pred = predict(variant, store, &sample.image)?;
        scorer.add_sample(&pred.mask, &pred.confidence, &sample.mask)?;
    }
    Ok(scorer.finish(vocab, include_background))
}

pub fn evaluate_split<F: Scalar>(
    variant: &dyn Variant<F>,
    store: &ParamStore<F>,
    split: &LoadedSplit,
    include_background: bool,
    iou_thresh: f64,
) -> Result<EvalReport> {
    if split.vocab.labels().is_empty() {
        anyhow::bail!("split has an empty vocabulary");
    }
    evaluate_samples(variant, store, &split.vocab, &split.samples, include_background, iou_thresh)
}

/// Mean IoU restricted to a set of label indices (mask values are index+1),
/// computed from a report's confusion matrix.
pub fn miou_over_classes(report: &EvalReport, label_indices: &[usize]) -> f64 {
    let mut vals = Vec::new();
    for &idx in label_indices {
        if let Some(iou) = report.per_class_iou[idx + 1] {
            vals.push(iou);
        }
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Image tensor helper shared by infer paths.
pub fn image_from_tensor_bytes(img: &RgbImage) -> Tensor<f64> {
    ctxseg_model::Backbone::image_tensor(img)
}
