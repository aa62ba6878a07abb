//! Pipeline crate: configuration, training, evaluation, ablation,
//! inference and plotting, exposed both as a library (for the test suites)
//! and through the `ctxseg` binary.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod infer;
pub mod pipeline;
pub mod plot;
pub mod trainer;

pub use config::{DtypeChoice, GenConfig, TrainConfig};
