//! Dual-head 3D encoder-decoder network and its training primitives.

pub mod adam;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod weights;

pub use adam::Adam;
pub use model::{
    checksum_with_prefix, params_checksum, split_for_target, ClassHead, ClassifierNet, DecoderMode, ModelConfig,
    Outputs, SegmenterNet, SemanticGenesisNet, TargetKind, TargetModel,
};
pub use tensor::{Param, Parameters, Real, Tensor};
pub use weights::{ModelWeights, WeightSidecar};
