//! Self-supervised pretraining for 3D volumes: self-discovery of recurring
//! anatomical patterns, self-classification of their pseudo labels, and
//! self-restoration of transformed crops, plus the fine-tuning pathways that
//! consume the pretrained weights.

pub mod config;
pub mod dataio;
pub mod discovery;
pub mod error;
pub mod finetune;
pub mod network;
pub mod pipeline;
pub mod pretrain;
pub mod rng;
pub mod transforms;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_config, Coordinate, LatentVector, LossWeights, OptimizerKind, PatternCrop, PretrainConfig, Shape3, Volume,
};
