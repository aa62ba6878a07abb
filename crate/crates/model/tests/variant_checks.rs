//! Variant registry contracts: structural gating, shapes, determinism and
//! the graph-free fallback.

mod common;

use common::random_image;
use ctxseg_core::{ParamStore, Rng, Session, Tape};
use ctxseg_data::{Mask, Vocab};
use ctxseg_model::backbone::BackboneConfig;
use ctxseg_model::embeddings::{embed_labels, HashedProvider};
use ctxseg_model::variants::{
    build_variant, ForwardInput, GraphSource, ModelConfig, Variant, VARIANT_NAMES,
};
use ctxseg_model::ModelError;

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig::tiny(),
        fusion: ctxseg_model::fusion::FusionConfig { heads: 2, residual_norm: true },
        gnn: ctxseg_model::gnn::GnnConfig { iterations: 2, hidden: 8, area_min: 4, radius: 0.9 },
        embeddings_trainable: false,
    }
}

fn make(
    name: &str,
    seed: u64,
) -> (Box<dyn Variant<f64>>, ParamStore<f64>, Vocab) {
    let vocab = Vocab::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let embeddings = embed_labels(&vocab, &HashedProvider { dim: 8, seed: 3 }).unwrap();
    let mut store = ParamStore::new();
    let rng = Rng::new(seed, 0);
    let v = build_variant(name, &tiny_model_config(), &vocab, &embeddings, &mut store, &rng)
        .unwrap();
    (v, store, vocab)
}

#[test]
fn registry_covers_the_four_rows_and_rejects_unknowns() {
    assert_eq!(VARIANT_NAMES, ["baseline", "llm", "xattn", "gnn"]);
    for name in VARIANT_NAMES {
        let (v, _, _) = make(name, 1);
        assert_eq!(v.name(), name);
    }
    let vocab = Vocab::new(vec!["a".into()]).unwrap();
    let embeddings = embed_labels(&vocab, &HashedProvider { dim: 8, seed: 3 }).unwrap();
    let mut store: ParamStore<f64> = ParamStore::new();
    let rng = Rng::new(1, 0);
    assert!(matches!(
        build_variant("swin", &tiny_model_config(), &vocab, &embeddings, &mut store, &rng),
        Err(ModelError::UnknownVariant(_))
    ));
}

#[test]
fn baseline_forward_contains_no_fusion_or_graph_ops() {
    let img = random_image(16, 16, 2);
    let mut gt = Mask::new(16, 16);
    for y in 2..8 {
        for x in 2..8 {
            gt.set(x, y, 1);
        }
    }
    for name in VARIANT_NAMES {
        let (v, store, _) = make(name, 3);
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let out = v
            .forward(&sess, &ForwardInput { image: &img, graph: GraphSource::Mask(&gt) })
            .unwrap();
        match name {
            "baseline" => {
                assert_eq!(out.stage_ops.fusion, 0, "baseline must run zero fusion ops");
                assert_eq!(out.stage_ops.graph, 0, "baseline must run zero graph ops");
                assert!(out.attention.is_none());
                assert!(out.graph.is_none());
            }
            "llm" => {
                assert_eq!(out.stage_ops.fusion, 0);
                assert_eq!(out.stage_ops.graph, 0);
            }
            "xattn" => {
                assert!(out.stage_ops.fusion > 0);
                assert_eq!(out.stage_ops.graph, 0);
            }
            "gnn" => {
                assert!(out.stage_ops.fusion > 0);
                assert!(out.stage_ops.graph > 0);
                assert!(out.graph.is_some());
                assert!(out.class_rows.is_some());
            }
            _ => unreachable!(),
        }
        assert!(out.stage_ops.backbone > 0);
        assert!(out.stage_ops.head > 0);
    }
}

#[test]
fn logits_cover_label_resolution_with_background_channel() {
    let img = random_image(16, 16, 4);
    for name in VARIANT_NAMES {
        let (v, store, vocab) = make(name, 5);
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let out =
            v.forward(&sess, &ForwardInput { image: &img, graph: GraphSource::None }).unwrap();
        assert_eq!((out.label_h, out.label_w), (16, 16));
        assert_eq!(tape.shape(out.logits), vec![256, vocab.channels()]);
    }
}

#[test]
fn same_seed_builds_identical_variants() {
    let img = random_image(16, 16, 6);
    for name in VARIANT_NAMES {
        let run = || {
            let (v, store, _) = make(name, 7);
            let tape = Tape::new();
            let sess = Session::new(&tape, &store);
            let out =
                v.forward(&sess, &ForwardInput { image: &img, graph: GraphSource::None }).unwrap();
            tape.value(out.logits).data().to_vec()
        };
        assert_eq!(run(), run(), "{name} must be deterministic under a fixed seed");
    }
}

#[test]
fn gnn_with_empty_graph_equals_graph_free_pass() {
    let img = random_image(16, 16, 8);
    let empty_mask = Mask::new(16, 16);
    let (v, store, _) = make("gnn", 9);

    let run = |graph: GraphSource<'_>| {
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let out = v.forward(&sess, &ForwardInput { image: &img, graph }).unwrap();
        tape.value(out.logits).data().to_vec()
    };
    let free = run(GraphSource::None);
    let empty = run(GraphSource::Mask(&empty_mask));
    assert_eq!(free, empty, "empty graph must reduce exactly to table scoring");
}

#[test]
fn gnn_with_objects_changes_present_class_scores() {
    let img = random_image(16, 16, 10);
    let mut gt = Mask::new(16, 16);
    for y in 2..8 {
        for x in 2..8 {
            gt.set(x, y, 1);
        }
    }
    for y in 9..14 {
        for x in 9..14 {
            gt.set(x, y, 2);
        }
    }
    let (v, store, _) = make("gnn", 11);
    let run = |graph: GraphSource<'_>| {
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let out = v.forward(&sess, &ForwardInput { image: &img, graph }).unwrap();
        tape.value(out.logits).data().to_vec()
    };
    let free = run(GraphSource::None);
    let with_graph = run(GraphSource::Mask(&gt));
    assert_ne!(free, with_graph, "graph refinement must affect the logits");
}
