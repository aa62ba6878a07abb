//! Scene graph construction and message-passing refinement of node
//! embeddings.
//!
//! Nodes are object instances (connected components of a label mask);
//! edges connect instance pairs whose normalized centroids are within a
//! radius, in both directions. Each iteration computes every message from
//! the pre-iteration state, then updates nodes with incoming messages as
//! `LayerNorm(e + mean(messages))`; isolated nodes pass through untouched.

use ctxseg_core::{fnv1a64, ParamId, ParamStore, Rng, Scalar, Session, Tensor, Var};
use ctxseg_data::{connected_components, Mask, Vocab};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::Result;

pub const EDGE_FEATURES: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GnnConfig {
    /// Message-passing iterations T.
    pub iterations: usize,
    pub hidden: usize,
    /// Minimum component area in pixels for a node.
    pub area_min: usize,
    /// Normalized centroid-distance threshold for edges.
    pub radius: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self { iterations: 2, hidden: 64, area_min: 4, radius: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub class_index: usize,
    /// Normalized centroid `(x, y)` in `[0, 1]^2`.
    pub centroid: (f64, f64),
    /// Area as a fraction of the mask.
    pub area_frac: f64,
    pub area: usize,
    /// Pixel bounding box, inclusive.
    pub bbox: (u32, u32, u32, u32),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGraph {
    pub nodes: Vec<GraphNode>,
    /// Directed edges; for every `(i, j)` the reverse `(j, i)` is present.
    pub edges: Vec<(usize, usize)>,
}

impl SceneGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Classes present in the graph, ascending and unique.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut cs: Vec<usize> = self.nodes.iter().map(|n| n.class_index).collect();
        cs.sort_unstable();
        cs.dedup();
        cs
    }
}

/// One node per 4-connected component of each non-background class with
/// area at least `area_min`; edges between all pairs within `radius`.
pub fn build_scene_graph(mask: &Mask, vocab: &Vocab, cfg: &GnnConfig) -> Result<SceneGraph> {
    let (w, h) = (mask.width as f64, mask.height as f64);
    let total = (mask.width * mask.height) as f64;
    let mut nodes = Vec::new();
    for region in connected_components(mask) {
        if region.area() < cfg.area_min {
            continue;
        }
        let class_index = vocab.label_index_of_mask(region.mask_value).ok_or(
            ctxseg_data::DataError::MaskValueOutOfRange {
                value: region.mask_value,
                classes: vocab.len(),
            },
        )?;
        nodes.push(GraphNode {
            class_index,
            centroid: (region.centroid.0 / w, region.centroid.1 / h),
            area_frac: region.area() as f64 / total,
            area: region.area(),
            bbox: region.bbox,
        });
    }
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let dx = nodes[i].centroid.0 - nodes[j].centroid.0;
            let dy = nodes[i].centroid.1 - nodes[j].centroid.1;
            if (dx * dx + dy * dy).sqrt() <= cfg.radius {
                edges.push((i, j));
                edges.push((j, i));
            }
        }
    }
    Ok(SceneGraph { nodes, edges })
}

/// Spatial/semantic relation vector for the directed edge `(i, j)`:
/// `[dx, dy, distance, ln(area_j / area_i), bbox adjacency]`.
pub fn edge_features(from_i: &GraphNode, to_j: &GraphNode) -> [f64; EDGE_FEATURES] {
    let dx = to_j.centroid.0 - from_i.centroid.0;
    let dy = to_j.centroid.1 - from_i.centroid.1;
    let dist = (dx * dx + dy * dy).sqrt();
    let log_ratio = (to_j.area as f64 / from_i.area as f64).ln();
    let (ax0, ay0, ax1, ay1) = from_i.bbox;
    let (bx0, by0, bx1, by1) = to_j.bbox;
    let adjacent =
        ax0 <= bx1 + 1 && bx0 <= ax1 + 1 && ay0 <= by1 + 1 && by0 <= ay1 + 1;
    [dx, dy, dist, log_ratio, if adjacent { 1.0 } else { 0.0 }]
}

pub struct MessagePassing {
    cfg: GnnConfig,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
    dim: usize,
}

impl MessagePassing {
    pub fn new<F: Scalar>(
        cfg: GnnConfig,
        dim: usize,
        store: &mut ParamStore<F>,
        rng: &Rng,
        prefix: &str,
    ) -> Result<Self> {
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
        let (w1, b1) = lin(store, format!("{prefix}.mlp1"), dim + EDGE_FEATURES, cfg.hidden)?;
        let (w2, b2) = lin(store, format!("{prefix}.mlp2"), cfg.hidden, dim)?;
        let ln_g = store.add(format!("{prefix}.ln.g"), Tensor::filled(vec![dim], F::one())?, true)?;
        let ln_b = store.add(format!("{prefix}.ln.b"), Tensor::zeros(vec![dim]), true)?;
        Ok(Self { cfg, w1, b1, w2, b2, ln_g, ln_b, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Run T message-passing iterations over `embeddings` (one row per
    /// node). `T = 0` returns the input var unchanged.
    pub fn forward<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        graph: &SceneGraph,
        embeddings: Var,
    ) -> Result<Var> {
        self.run(sess, graph, embeddings, self.cfg.iterations)
    }

    pub fn run<F: Scalar>(
        &self,
        sess: &Session<'_, '_, F>,
        graph: &SceneGraph,
        embeddings: Var,
        iterations: usize,
    ) -> Result<Var> {
        let tape = sess.tape();
        let n = graph.nodes.len();
        if tape.shape(embeddings) != vec![n, self.dim] {
            return Err(ModelError::Config(format!(
                "embeddings shape {:?} vs {n} nodes of dim {}",
                tape.shape(embeddings),
                self.dim
            )));
        }
        let mut state = embeddings;
        if iterations == 0 || graph.edges.is_empty() || n == 0 {
            return Ok(state);
        }

        // static structure: edge sources, per-node in-degrees, mean-pooling
        // matrix and the pass-through selector for isolated nodes
        let e = graph.edges.len();
        let sources: Vec<usize> = graph.edges.iter().map(|&(_, j)| j).collect();
        let mut in_deg = vec![0usize; n];
        for &(i, _) in &graph.edges {
            in_deg[i] += 1;
        }
        let mut pool = vec![F::zero(); n * e];
        for (eidx, &(i, _)) in graph.edges.iter().enumerate() {
            pool[i * e + eidx] = F::from_f64(1.0 / in_deg[i] as f64);
        }
        let pool = tape.constant(Tensor::from_vec(vec![n, e], pool)?);

        let mut feat = Vec::with_capacity(e * EDGE_FEATURES);
        for &(i, j) in &graph.edges {
            for v in edge_features(&graph.nodes[i], &graph.nodes[j]) {
                feat.push(F::from_f64(v));
            }
        }
        let feat = tape.constant(Tensor::from_vec(vec![e, EDGE_FEATURES], feat)?);

        let select: Vec<usize> = (0..n).map(|i| if in_deg[i] > 0 { i } else { n + i }).collect();

        for _ in 0..iterations {
            let neighbor = tape.gather_rows(state, &sources)?;
            let inputs = tape.concat_cols(&[neighbor, feat])?;
            let hidden = tape.relu(tape.add_bias(
                tape.matmul(inputs, sess.var(self.w1))?,
                sess.var(self.b1),
            )?)?;
            let messages =
                tape.add_bias(tape.matmul(hidden, sess.var(self.w2))?, sess.var(self.b2))?;
            let agg = tape.matmul(pool, messages)?;
            let updated = tape.layer_norm(
                tape.add(state, agg)?,
                sess.var(self.ln_g),
                sess.var(self.ln_b),
                1e-5,
            )?;
            let both = tape.concat_rows(&[updated, state])?;
            state = tape.gather_rows(both, &select)?;
        }
        Ok(state)
    }
}
