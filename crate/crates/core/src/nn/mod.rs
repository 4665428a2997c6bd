//! Minimal CPU network engine: planar tensors, 3x3 convolutions, instance
//! normalization and PReLU, each with an explicit backward pass.

pub mod adam;
pub mod conv;
pub mod extractor;
pub mod layers;
pub mod model;
pub mod real;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use extractor::{ExtractorConfig, FeatureExtractor};
pub use model::{DelightModel, ModelConfig, ModelOutput, ModelTape};
pub use real::Real;
pub use tensor::Tensor;
