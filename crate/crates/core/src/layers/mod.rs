//! Layer variants, whole-model assembly and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod layer;
pub mod model;

pub use config::{BasisKind, Dataset, LayerConfig, ModelSpec, NormPosition, Variant};
pub use layer::{Layer, LayerTrace, Reduction};
pub use model::Model;
