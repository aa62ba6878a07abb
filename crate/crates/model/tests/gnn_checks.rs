//! Message-passing contracts: identities, permutation equivariance, hand
//! oracle, flood-fill agreement and the head fallback rule.

mod common;

use common::{gradcheck_params, probe_loss};
use ctxseg_core::{ParamStore, Rng, Session, Tape, Tensor};
use ctxseg_data::{connected_components, Mask, Vocab};
use ctxseg_model::gnn::{
    build_scene_graph, GnnConfig, GraphNode, MessagePassing, SceneGraph, EDGE_FEATURES,
};
use ctxseg_model::head::SegHead;

fn mp(dim: usize, hidden: usize, t: usize, seed: u64) -> (MessagePassing, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let rng = Rng::new(seed, 0);
    let cfg = GnnConfig { iterations: t, hidden, area_min: 4, radius: 0.5 };
    let m = MessagePassing::new(cfg, dim, &mut store, &rng, "gnn").unwrap();
    (m, store)
}

fn random_graph(nodes: usize, rng: &mut Rng, radius: f64) -> SceneGraph {
    let mut g = SceneGraph::default();
    for _ in 0..nodes {
        g.nodes.push(GraphNode {
            class_index: rng.below(4),
            centroid: (rng.uniform(), rng.uniform()),
            area_frac: rng.uniform_in(0.01, 0.2),
            area: rng.range_inclusive(4, 64),
            bbox: (0, 0, 7, 7),
        });
    }
    for i in 0..nodes {
        for j in i + 1..nodes {
            let dx = g.nodes[i].centroid.0 - g.nodes[j].centroid.0;
            let dy = g.nodes[i].centroid.1 - g.nodes[j].centroid.1;
            if (dx * dx + dy * dy).sqrt() <= radius {
                g.edges.push((i, j));
                g.edges.push((j, i));
            }
        }
    }
    g
}

#[test]
fn edgeless_graph_passes_embeddings_through_unchanged() {
    let (m, store) = mp(6, 8, 3, 1);
    let tape = Tape::new();
    let sess = Session::new(&tape, &store);
    let mut g = random_graph(4, &mut Rng::new(2, 0), 0.5);
    g.edges.clear();
    let mut rng = Rng::new(3, 0);
    let emb = Tensor::from_fn(vec![4, 6], |_| rng.uniform_in(-1.0, 1.0)).unwrap();
    let v = tape.constant(emb.clone());
    let out = m.forward(&sess, &g, v).unwrap();
    assert_eq!(tape.value(out).data(), emb.data(), "edgeless graph must be exact identity");
}

#[test]
fn zero_iterations_is_exact_identity() {
    let (m, store) = mp(6, 8, 0, 4);
    let tape = Tape::new();
    let sess = Session::new(&tape, &store);
    let g = random_graph(5, &mut Rng::new(5, 0), 0.9);
    let mut rng = Rng::new(6, 0);
    let emb = Tensor::from_fn(vec![5, 6], |_| rng.uniform_in(-1.0, 1.0)).unwrap();
    let v = tape.constant(emb.clone());
    let out = m.forward(&sess, &g, v).unwrap();
    assert_eq!(out, v, "T=0 must return the input var itself");
    assert_eq!(tape.value(out).data(), emb.data());
}

#[test]
fn isolated_nodes_pass_through_within_a_connected_graph() {
    let (m, store) = mp(4, 8, 2, 7);
    let tape = Tape::new();
    let sess = Session::new(&tape, &store);
    // nodes 0,1 connected; node 2 isolated
    let mut g = random_graph(3, &mut Rng::new(8, 0), 0.0);
    g.edges = vec![(0, 1), (1, 0)];
    let mut rng = Rng::new(9, 0);
    let emb = Tensor::from_fn(vec![3, 4], |_| rng.uniform_in(-1.0, 1.0)).unwrap();
    let v = tape.constant(emb.clone());
    let out = m.forward(&sess, &g, v).unwrap();
    let got = tape.value(out);
    assert_eq!(&got.data()[8..12], &emb.data()[8..12], "isolated node row must be untouched");
    assert_ne!(&got.data()[0..4], &emb.data()[0..4], "connected node must be refined");
}

/// Relabeling nodes by a permutation and permuting embeddings the same way
/// must permute the output identically.
#[test]
fn message_passing_is_permutation_equivariant() {
    let (m, store) = mp(6, 10, 2, 10);
    let mut trial_rng = Rng::new(11, 0);
    for trial in 0..20 {
        let n = trial_rng.range_inclusive(2, 7);
        let g = random_graph(n, &mut trial_rng, 0.8);
        let emb = {
            let mut r = Rng::new(12, trial as u64);
            Tensor::from_fn(vec![n, 6], |_| r.uniform_in(-1.0, 1.0)).unwrap()
        };

        let run = |graph: &SceneGraph, rows: &Tensor<f64>| {
            let tape = Tape::new();
            let sess = Session::new(&tape, &store);
            let v = tape.constant(rows.clone());
            let out = m.forward(&sess, graph, v).unwrap();
            tape.value(out).data().to_vec()
        };
        let base = run(&g, &emb);

        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..n).collect();
            trial_rng.shuffle(&mut perm); // perm[old] = new
            let mut pg = SceneGraph::default();
            pg.nodes = vec![g.nodes[0].clone(); n];
            for (old, &new) in perm.iter().enumerate() {
                pg.nodes[new] = g.nodes[old].clone();
            }
            pg.edges = g.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
            let mut rows = vec![0.0; n * 6];
            for (old, &new) in perm.iter().enumerate() {
                rows[new * 6..(new + 1) * 6].copy_from_slice(&emb.data()[old * 6..(old + 1) * 6]);
            }
            let out = run(&pg, &Tensor::from_vec(vec![n, 6], rows).unwrap());
            for (old, &new) in perm.iter().enumerate() {
                for c in 0..6 {
                    let a = out[new * 6 + c];
                    let b = base[old * 6 + c];
                    assert!(
                        (a - b).abs() <= 1e-5,
                        "trial {trial}: node {old}->{new} channel {c}: {a} vs {b}"
                    );
                }
            }
        }
    }
}

/// Two nodes, one iteration, hand-set MLP: message = relu(W1 [e_j; feat]) W2
/// with W1 selecting the embedding part and W2 = identity, so the update is
/// LayerNorm(e_i + relu(e_j)). Compare against plain-f64 arithmetic.
#[test]
fn two_node_single_iteration_matches_hand_computation() {
    let dim = 3;
    let (m, mut store) = mp(dim, dim, 1, 13);
    let set = |store: &mut ParamStore<f64>, name: &str, shape: Vec<usize>, data: Vec<f64>| {
        let id = store.id_of(name).unwrap();
        store.set_value(id, Tensor::from_vec(shape, data).unwrap());
    };
    // W1: (dim + EDGE_FEATURES, dim) = rows for e_j are identity, feature rows zero
    let mut w1 = vec![0.0; (dim + EDGE_FEATURES) * dim];
    for i in 0..dim {
        w1[i * dim + i] = 1.0;
    }
    set(&mut store, "gnn.mlp1.w", vec![dim + EDGE_FEATURES, dim], w1);
    let mut w2 = vec![0.0; dim * dim];
    for i in 0..dim {
        w2[i * dim + i] = 1.0;
    }
    set(&mut store, "gnn.mlp2.w", vec![dim, dim], w2);

    let mut g = SceneGraph::default();
    g.nodes.push(GraphNode {
        class_index: 0,
        centroid: (0.2, 0.2),
        area_frac: 0.01,
        area: 16,
        bbox: (0, 0, 3, 3),
    });
    g.nodes.push(GraphNode {
        class_index: 1,
        centroid: (0.4, 0.2),
        area_frac: 0.02,
        area: 32,
        bbox: (10, 0, 13, 3),
    });
    g.edges = vec![(0, 1), (1, 0)];

    let e0 = [0.5, -1.0, 2.0];
    let e1 = [-0.25, 0.75, 0.1];
    let tape = Tape::new();
    let sess = Session::new(&tape, &store);
    let emb = Tensor::from_vec(vec![2, dim], [e0, e1].concat()).unwrap();
    let out = m.forward(&sess, &g, tape.constant(emb)).unwrap();
    let got = tape.value(out);

    let layer_norm = |row: [f64; 3]| -> [f64; 3] {
        let mu = (row[0] + row[1] + row[2]) / 3.0;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 3.0;
        let rstd = 1.0 / (var + 1e-5).sqrt();
        [
            (row[0] - mu) * rstd,
            (row[1] - mu) * rstd,
            (row[2] - mu) * rstd,
        ]
    };
    let relu = |v: f64| v.max(0.0);
    let expect0 = layer_norm([
        e0[0] + relu(e1[0]),
        e0[1] + relu(e1[1]),
        e0[2] + relu(e1[2]),
    ]);
    let expect1 = layer_norm([
        e1[0] + relu(e0[0]),
        e1[1] + relu(e0[1]),
        e1[2] + relu(e0[2]),
    ]);
    for c in 0..3 {
        assert!((got.data()[c] - expect0[c]).abs() <= 1e-9);
        assert!((got.data()[3 + c] - expect1[c]).abs() <= 1e-9);
    }
}

#[test]
fn graph_nodes_match_flood_fill_oracle_on_200_random_masks() {
    let vocab = Vocab::new((0..4).map(|i| format!("c{i}")).collect()).unwrap();
    let cfg = GnnConfig::default();
    for trial in 0..200u64 {
        let mut rng = Rng::new(0xBEE5, trial);
        let w = rng.range_inclusive(4, 16) as u32;
        let h = rng.range_inclusive(4, 16) as u32;
        let mut mask = Mask::new(w, h);
        for v in mask.data.iter_mut() {
            *v = rng.below(5) as u8;
        }
        let graph = build_scene_graph(&mask, &vocab, &cfg).unwrap();

        // oracle: regions from the component labeler, area-filtered
        let mut expect: Vec<(usize, usize)> = connected_components(&mask)
            .iter()
            .filter(|r| r.area() >= cfg.area_min)
            .map(|r| (r.mask_value as usize - 1, r.area()))
            .collect();
        let mut got: Vec<(usize, usize)> =
            graph.nodes.iter().map(|n| (n.class_index, n.area)).collect();
        expect.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, expect, "trial {trial}");
    }
}

#[test]
fn head_fallback_and_duplicate_node_rules() {
    let dim = 4;
    let mut store: ParamStore<f64> = ParamStore::new();
    let rng = Rng::new(15, 0);
    let head = SegHead::new(6, dim, &mut store, &rng, "head").unwrap();

    let tape = Tape::new();
    let sess = Session::new(&tape, &store);
    let mut frng = Rng::new(16, 0);
    let feats = tape.constant(Tensor::from_fn(vec![5, 6], |_| frng.uniform_in(-1.0, 1.0)).unwrap());
    let table = Tensor::from_fn(vec![3, dim], |_| frng.uniform_in(-1.0, 1.0)).unwrap();

    // graph absent: scoring against the raw table
    let base = head.forward(&sess, feats, tape.constant(table.clone())).unwrap();
    assert_eq!(tape.shape(base), vec![5, 4]); // 3 classes + background

    // duplicate rows of the same class with identical embeddings pool to
    // the same row, so logits are identical
    let row = &table.data()[0..dim];
    let mean_of_two: Vec<f64> = row.iter().map(|&v| (v + v) / 2.0).collect();
    let mut rows2 = table.data().to_vec();
    rows2[0..dim].copy_from_slice(&mean_of_two);
    let dup = head.forward(&sess, feats, tape.constant(Tensor::from_vec(vec![3, dim], rows2).unwrap())).unwrap();
    assert_eq!(tape.value(base).data(), tape.value(dup).data());
}

#[test]
fn head_matches_dot_product_oracle() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let rng = Rng::new(17, 0);
    let head = SegHead::new(2, 2, &mut store, &rng, "head").unwrap();
    let set = |store: &mut ParamStore<f64>, name: &str, shape: Vec<usize>, data: Vec<f64>| {
        let id = store.id_of(name).unwrap();
        store.set_value(id, Tensor::from_vec(shape, data).unwrap());
    };
    set(&mut store, "head.proj.w", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    set(&mut store, "head.background", vec![1, 2], vec![0.1, -0.2]);

    let tape = Tape::new();
    let sess = Session::new(&tape, &store);
    let feats = tape.constant(Tensor::from_vec(vec![1, 2], vec![0.5, 2.0]).unwrap());
    let rows = tape.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let logits = head.forward(&sess, feats, rows).unwrap();
    let got = tape.value(logits);
    // projected = (0.5, 2.0); logits = [<p, bg>, <p, e0>, <p, e1>]
    let expect = [0.5 * 0.1 + 2.0 * -0.2, 0.5, 2.0];
    for (g, e) in got.data().iter().zip(&expect) {
        assert!((g - e).abs() <= 1e-12);
    }
}

#[test]
fn message_passing_plus_head_gradcheck() {
    let dim = 4;
    let mut store: ParamStore<f64> = ParamStore::new();
    let rng = Rng::new(19, 0);
    let cfg = GnnConfig { iterations: 2, hidden: 6, area_min: 4, radius: 0.9 };
    let m = MessagePassing::new(cfg, dim, &mut store, &rng, "gnn").unwrap();
    let head = SegHead::new(5, dim, &mut store, &rng, "head").unwrap();

    let g = random_graph(4, &mut Rng::new(20, 0), 0.9);
    let mut r = Rng::new(21, 0);
    let emb = Tensor::from_fn(vec![4, dim], |_| r.uniform_in(-1.0, 1.0)).unwrap();
    let feats = Tensor::from_fn(vec![6, 5], |_| r.uniform_in(-1.0, 1.0)).unwrap();

    let worst = gradcheck_params(
        &mut store,
        &|sess: &Session<'_, '_, f64>| {
            let tape = sess.tape();
            let refined = m.forward(sess, &g, tape.constant(emb.clone())).unwrap();
            let logits = head.forward(sess, tape.constant(feats.clone()), refined).unwrap();
            probe_loss(tape, logits, 22)
        },
        6,
        103,
    );
    assert!(worst <= 1e-3, "gnn+head gradcheck max rel err {worst:.3e}");
}
