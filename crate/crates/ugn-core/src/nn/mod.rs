//! Neural operators: convolution, pooling, upsampling, batch
//! normalization, and cross-entropy. Stable log-sum-exp and softmax live on
//! [`Tensor`](crate::tensor::Tensor) itself ([`logsumexp`], [`softmax`])
//! since they are generic lane reductions.
//!
//! [`logsumexp`]: crate::tensor::Tensor::logsumexp
//! [`softmax`]: crate::tensor::Tensor::softmax

mod batchnorm;
mod conv;
mod loss;
mod pool;

pub use batchnorm::{batchnorm2d, BatchNormState};
pub use conv::{conv2d, Conv2dParams};
pub use loss::{crossentropy_axis, crossentropy_from_logits};
pub use pool::{maxpool2d, upsample_nearest};
