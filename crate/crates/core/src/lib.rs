//! Desk-scale multi-branch image classifier with pixel attention.
//!
//! Each branch trains a small CNN, derives a pixel-wise attention map from its
//! feature block via global average pooling, and enhances the images for the
//! next branch by weighted superposition; branch predictions are fused by
//! majority voting. Every numeric kernel here is written to be verifiable:
//! gradients check against central finite differences, the attention algebra
//! has closed-form invariants, and training is bitwise reproducible per seed.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod pgm;
pub mod pipeline;
pub mod report;
pub mod tensor;

pub use attention::AttentionMap;
pub use backbone::{BackboneSpec, BranchParams, LayerSpec};
pub use config::{PipelineConfig, Profile};
pub use data::Dataset;
pub use error::{Error, Result};
pub use metrics::{ConfusionCounts, MetricReport};
pub use pipeline::{AblationOutcome, PipelineResult};
pub use tensor::Tensor;
