//! Reference-guided super-resolution for single-coil MR magnitude images:
//! windowed-attention feature extraction, context matching against a
//! high-resolution reference, multi-scale aggregation, and k-space tools.

pub mod aggregation;
pub mod config;
pub mod error;
pub mod io;
pub mod kspace;
pub mod loss;
pub mod matching;
pub mod pipeline;
pub mod pyramid;
pub mod selftest;
pub mod swin;
pub mod tensor;
pub mod weights;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use kspace::{central_mask, degrade, zero_fill_upsample, ImagePlane, KSpaceGrid, SamplingMask};
pub use pipeline::{ForwardOutput, Model};
pub use tensor::FeatureMap;
pub use weights::WeightStore;
