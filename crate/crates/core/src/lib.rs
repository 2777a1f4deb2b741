//! Pneumonia X-ray classification from first principles: image enhancement,
//! a small CNN and a single-block ResNet with hand-derived gradients,
//! Adam/BCE training, evaluation metrics, a synthetic corpus generator and
//! an ablation harness.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod layers;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
