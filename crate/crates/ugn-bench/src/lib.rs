//! Deterministic fixtures for the operator benchmarks.
//!
//! Everything is built from fixed seeds so consecutive benchmark runs
//! measure the same work.

use rand::Rng;
use ugn_core::net::{Encoder, EncoderConfig, UgnModel};
use ugn_core::nn::Conv2dParams;
use ugn_core::{derive_rng, Tensor, UncertaintyConfig};

/// A differentiable leaf with values spread over `[-1, 1)`; benchmarks only
/// need stable, non-degenerate inputs, not a particular distribution.
pub fn randn_leaf(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = derive_rng(seed, "bench/randn", &[]);
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::leaf(shape, data).expect("fixture shape")
}

/// Input and kernel for a mid-pyramid 3x3 convolution.
pub fn conv_fixture() -> (Tensor<f64>, Conv2dParams<f64>) {
    let x = randn_leaf(&[1, 8, 32, 32], 11);
    let kernel = randn_leaf(&[8, 8, 3, 3], 12);
    (
        x,
        Conv2dParams {
            kernel,
            bias: None,
            stride: 1,
            padding: 1,
        },
    )
}

/// Logits and log-variances on a 16x16 grid with four classes.
pub fn gamma_fixture() -> (Tensor<f64>, Tensor<f64>, UncertaintyConfig) {
    let l = randn_leaf(&[1, 4, 16, 16], 21);
    let s = randn_leaf(&[1, 4, 16, 16], 22).affine(0.2, -2.0).unwrap();
    (l, s, UncertaintyConfig::default())
}

/// The default desk-scale encoder plus a 64x64 input image.
pub fn encoder_fixture() -> (Encoder<f64>, Tensor<f64>) {
    let mut rng = derive_rng(31, "bench/encoder", &[]);
    let enc = Encoder::new(&EncoderConfig::default(), &mut rng).expect("encoder");
    let x = randn_leaf(&[1, 3, 64, 64], 32);
    (enc, x)
}

/// A full four-class model plus a 64x64 input image.
pub fn model_fixture() -> (UgnModel<f64>, Tensor<f64>) {
    let mut rng = derive_rng(41, "bench/model", &[]);
    let model = UgnModel::new(&ugn_core::net::ModelConfig::with_classes(4), &mut rng)
        .expect("model");
    let x = randn_leaf(&[1, 3, 64, 64], 42);
    (model, x)
}
