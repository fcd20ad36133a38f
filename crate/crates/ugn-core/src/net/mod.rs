//! Network assembly: encoder, uncertainty-gated refinement, fusion.

mod encoder;
mod model;
mod param;

pub use encoder::{Encoder, EncoderConfig, FeaturePyramid};
pub use model::{
    fuse_levels, fuse_levels_with, gate_refine, gate_refine_with, GateLevelOutput, HeadPair,
    ModelConfig, Prediction, UgnModel,
};
pub use param::Parameter;
