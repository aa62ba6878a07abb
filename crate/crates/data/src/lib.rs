//! Synthetic labeled scenes, bit-exact image I/O and dataset plumbing.
//!
//! Scenes contain a confusable class pair: two classes rendered
//! pixel-identically whose identity is determined solely by a co-occurring
//! context object. A context-blind segmenter is capped near chance on the
//! pair; that gap is what the training pipeline is measured on.

pub mod augment;
pub mod error;
pub mod manifest;
pub mod mask;
pub mod netpbm;
pub mod regions;
pub mod scene;
pub mod vocab;

pub use augment::{augment, hflip_image, hflip_mask, AugmentConfig};
pub use error::DataError;
pub use manifest::{Manifest, ManifestObject, ManifestSample};
pub use mask::Mask;
pub use netpbm::{read_pgm, read_ppm, write_pgm, write_ppm, GrayImage, RgbImage};
pub use regions::{connected_components, Region};
pub use scene::{
    load_split, write_split, LoadedSplit, SampleRecord, SceneConfig, SceneDescription,
    SceneObject, ShapeKind,
};
pub use vocab::{Vocab, BACKGROUND_ID};

pub type Result<T> = std::result::Result<T, DataError>;
