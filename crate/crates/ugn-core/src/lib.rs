//! Uncertainty-gated segmentation network, desk scale.
//!
//! A small convolutional encoder produces a five-level feature pyramid.
//! Each level carries a classification head and a log-variance head; Monte
//! Carlo sampling of the predicted logit distribution yields a per-pixel
//! uncertainty map that (a) gates how much of the finer encoder feature is
//! admitted into the running memory between levels and (b) weights the
//! final fusion of per-level class scores. Everything runs on a from-scratch
//! reverse-mode autodiff engine over dense row-major tensors.

pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod rngstream;
pub mod scalar;
pub mod selfcheck;
pub mod tensor;
pub mod train;
pub mod uncertainty;

pub use data::{Palette, SegSample, SynthConfig};
pub use error::{Error, Result};
pub use metrics::ConfusionMatrix;
pub use rngstream::{derive_rng, derive_seed};
pub use scalar::Scalar;
pub use selfcheck::CheckResult;
pub use tensor::{argmax_axis, gradient_check, gradient_check_multi, stop_gradient, Tape, Tensor};
pub use train::{
    augment_sample, lr_schedule, total_loss, train_epoch, AugmentConfig, EpochStats, TrainConfig,
    WnAdam,
};
pub use uncertainty::{
    gamma_map, sample_logits, uncertainty_loss, GammaClassMode, GammaMap, UncertaintyConfig,
};
