//! Context-aware segmentation model stack.
//!
//! The pieces compose bottom-up: a hierarchical windowed-attention encoder
//! produces a visual feature map, label embeddings provide a semantic
//! vocabulary, cross-attention fuses the two, and a scene-graph message
//! passing step refines per-class embeddings before the per-pixel head.
//! The four ablation variants live behind a common trait and are selected
//! by name at runtime ([`variants`]).

pub mod backbone;
pub mod embeddings;
pub mod error;
pub mod fusion;
pub mod gnn;
pub mod head;
pub mod losses;
pub mod metrics;
pub mod variants;

pub use backbone::{Backbone, BackboneConfig, FeatureMap};
pub use embeddings::{
    embed_labels, provider_from_config, EmbeddingConfig, EmbeddingProvider, LabelEmbeddingSet,
    Provenance, SimilarityPairs,
};
pub use error::ModelError;
pub use fusion::{AttentionWeights, CrossAttention, FusionConfig};
pub use gnn::{build_scene_graph, edge_features, GnnConfig, GraphNode, MessagePassing, SceneGraph};
pub use head::{LinearHead, SegHead};
pub use losses::{contrastive_loss, cross_entropy_loss, total_loss, LossConfig};
pub use metrics::{compute_miou, decode_predictions, EvalReport, SegmentationScorer};
pub use variants::{
    build_variant, ForwardInput, ForwardOutput, GraphSource, ModelConfig, StageOps, Variant,
    VARIANT_NAMES,
};

pub type Result<T> = std::result::Result<T, ModelError>;
