//! The five pipeline commands plus the helpers they share.
//!
//! Shared conventions: the palette travels with the dataset as
//! `palette.txt`, the model's class count is the palette's active count and
//! must agree with the `classes` setting, and whole-image inference draws
//! its Monte-Carlo noise from a stream keyed by the image stem — so
//! training-time validation, `infer`, and `eval` see bit-identical
//! predictions for the same image.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ugn_core::data::{GrayRaster, RgbRaster};
use ugn_core::rngstream::ChaCha8Rng;
use ugn_core::net::{Prediction, UgnModel};
use ugn_core::{derive_rng, ConfusionMatrix, Palette, SegSample, Tensor, UncertaintyConfig};

use crate::config::RunConfig;

pub mod eval;
pub mod infer;
pub mod synth;
pub mod train;

/// The class count the model is built with: the palette's active count,
/// cross-checked against the `classes` setting so one config cannot
/// silently drive two different models.
pub(crate) fn class_count(cfg: &RunConfig, palette: &Palette) -> Result<usize> {
    let classes = palette.active_classes();
    if cfg.classes != classes {
        bail!(
            "palette has {classes} active classes but the config says \
             classes = {}; set `classes` to match the dataset",
            cfg.classes
        );
    }
    Ok(classes)
}

/// Builds the model skeleton with init weights drawn from the master seed.
pub(crate) fn build_model(cfg: &RunConfig, classes: usize) -> Result<UgnModel<f32>> {
    let mut rng = derive_rng(cfg.seed, "init", &[]);
    Ok(UgnModel::new(&cfg.model_config(classes), &mut rng)?)
}

/// Builds a model and loads the configured checkpoint into it (the path
/// defaults to `<output_dir>/checkpoint_final.ugn`).
pub(crate) fn restore_model(cfg: &RunConfig, palette: &Palette) -> Result<(UgnModel<f32>, usize)> {
    let classes = class_count(cfg, palette)?;
    let ckpt = crate::checkpoint::Checkpoint::load(&cfg.checkpoint_path())?;
    let model = build_model(cfg, classes)?;
    let mut opt = ugn_core::WnAdam::new(cfg.beta1)?;
    crate::checkpoint::restore(&ckpt, &model, &mut opt, cfg, classes)?;
    Ok((model, classes))
}

/// The Monte-Carlo stream used for whole-image prediction of one image.
/// Keyed by stem, not by visitation order, so every command sees the same
/// noise for the same image.
pub(crate) fn infer_rng(seed: u64, stem: &str) -> ChaCha8Rng {
    derive_rng(seed, &format!("infer/{stem}"), &[])
}

/// Predicts one image with its stem-keyed stream.
pub(crate) fn predict_sample(
    model: &UgnModel<f32>,
    x: &Tensor<f32>,
    unc: &UncertaintyConfig,
    seed: u64,
    stem: &str,
) -> Result<Prediction<f32>> {
    let mut rng = infer_rng(seed, stem);
    model
        .predict_image(x, unc, &mut rng)
        .map_err(|e| anyhow!("predicting `{stem}`: {e}"))
}

/// Runs whole-image prediction over labeled samples and accumulates the
/// confusion matrix (unknown pixels skipped).
pub(crate) fn evaluate_samples(
    model: &UgnModel<f32>,
    samples: &[(String, SegSample)],
    classes: usize,
    unc: &UncertaintyConfig,
    seed: u64,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes)?;
    for (stem, sample) in samples {
        let x = sample.image_tensor::<f32>()?;
        let pred = predict_sample(model, &x, unc, seed, stem)?;
        cm.accumulate(&pred.class_map, &sample.mask, &sample.valid)?;
    }
    Ok(cm)
}

/// Interleaved 8-bit RGB to the `[1,3,H,W]` network input, scaled to
/// `[0, 1]` exactly like [`SegSample::from_rasters`] does.
pub(crate) fn raster_tensor(raster: &RgbRaster) -> Result<Tensor<f32>> {
    let (h, w) = (raster.height, raster.width);
    let pixels = h * w;
    let mut data = vec![0.0f32; 3 * pixels];
    for p in 0..pixels {
        for c in 0..3 {
            data[c * pixels + p] = raster.data[3 * p + c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec(&[1, 3, h, w], data)?)
}

/// Renders a `[1,1,H,W]` γ map as 8-bit grayscale, scaled by `255 / ln C`
/// so the provable winner-mode range `[0, ln C]` spans the full ramp.
pub(crate) fn gamma_raster(gamma: &Tensor<f32>, classes: usize) -> Result<GrayRaster> {
    let shape = gamma.shape();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != 1 {
        bail!("gamma map should be [1,1,H,W], got {shape:?}");
    }
    let scale = 255.0 / (classes as f64).ln();
    let data = gamma
        .data()
        .iter()
        .map(|&g| (f64::from(g) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(GrayRaster::new(shape[2], shape[3], data)?)
}

/// Stems of every `<stem>_sat.png` / `<stem>_sat.ppm` in a directory,
/// sorted; masks are not required.
pub(crate) fn list_sat_stems(dir: &Path) -> Result<Vec<String>> {
    const SUFFIXES: [&str; 2] = ["_sat.png", "_sat.ppm"];
    let listing = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list dataset directory {}", dir.display()))?;
    let mut stems = Vec::new();
    for entry in listing {
        let entry = entry.with_context(|| format!("cannot list {}", dir.display()))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        for suffix in SUFFIXES {
            if let Some(stem) = name.strip_suffix(suffix) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    stems.dedup();
    Ok(stems)
}
