//! Per-level training loss.
//!
//! Every refinement level contributes an uncertainty term (the mean γ over
//! valid pixels) and a classification term (cross-entropy of the sampled
//! logits against labels, averaged over the Monte-Carlo samples via the
//! pooled per-pixel mean). Labels are reduced to each level's grid by
//! top-left nearest lookup so class identity is never interpolated.

use crate::error::{Error, Result};
use crate::net::GateLevelOutput;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::TrainConfig;
use crate::uncertainty::{gamma_map, uncertainty_loss, GammaClassMode};

/// Assembles the scalar loss
/// `Σ_j λ_unc · mean(γ^(j)) + λ_ce · ce(l̂^(j))` over all levels.
///
/// `labels` and `valid` are row-major `[H, W]` at crop resolution; each
/// level's grid must divide the crop evenly. In label mode the γ of each
/// level is recomputed from the stored logit samples against the true
/// classes; winner mode reuses the γ the forward pass produced. A non-finite
/// level term aborts with the level named.
pub fn total_loss<T: Scalar>(
    levels: &[GateLevelOutput<T>],
    labels: &[u8],
    valid: &[bool],
    extent: (usize, usize),
    cfg: &TrainConfig,
) -> Result<Tensor<T>> {
    const OP: &str = "total_loss";
    let (height, width) = extent;
    if labels.len() != height * width || valid.len() != height * width {
        return Err(Error::shape(
            OP,
            format!(
                "expected {height}x{width} labels and validity, got {} and {}",
                labels.len(),
                valid.len()
            ),
        ));
    }
    if levels.is_empty() {
        return Err(Error::contract(OP, "no levels to score"));
    }
    let lambda_unc = T::from_f64(cfg.lambda_unc);
    let lambda_ce = T::from_f64(cfg.lambda_ce);
    let mut total = Tensor::<T>::zeros(&[])?;
    for lv in levels {
        let shape = lv.logits.shape();
        let (n, lh, lw) = (shape[0], shape[2], shape[3]);
        if n != 1 {
            return Err(Error::shape(
                OP,
                format!("training expects batch 1, level {} has {n}", lv.level),
            ));
        }
        if lh == 0 || height % lh != 0 || width != lw * (height / lh) {
            return Err(Error::shape(
                OP,
                format!(
                    "level {} grid {lh}x{lw} does not divide the {height}x{width} crop",
                    lv.level
                ),
            ));
        }
        let factor = height / lh;
        let mut level_labels = Vec::with_capacity(lh * lw);
        let mut level_valid = Vec::with_capacity(lh * lw);
        for y in 0..lh {
            for x in 0..lw {
                let p = (y * factor) * width + x * factor;
                level_valid.push(valid[p]);
                // Invalid lanes get a placeholder class; both constituents
                // mask them out.
                level_labels.push(if valid[p] { labels[p] as usize } else { 0 });
            }
        }

        let samples = lv.lhat.shape()[0];
        let mut tiled_labels = Vec::with_capacity(samples * lh * lw);
        let mut tiled_valid = Vec::with_capacity(samples * lh * lw);
        for _ in 0..samples {
            tiled_labels.extend_from_slice(&level_labels);
            tiled_valid.extend_from_slice(&level_valid);
        }
        let ce = crate::nn::crossentropy_axis(&lv.lhat, 2, &tiled_labels, &tiled_valid)?;

        let unc = match cfg.uncertainty.gamma_class_mode {
            GammaClassMode::Winner => uncertainty_loss(&lv.gamma, &level_valid)?,
            GammaClassMode::Label => {
                let gamma = gamma_map(&lv.lhat, &cfg.uncertainty, Some(&level_labels))?;
                uncertainty_loss(&gamma, &level_valid)?
            }
        };

        let term = unc
            .affine(lambda_unc, T::ZERO)?
            .add(&ce.affine(lambda_ce, T::ZERO)?)?;
        if !term.item()?.is_finite() {
            return Err(Error::domain(
                OP,
                format!("non-finite loss at level {}", lv.level),
            ));
        }
        total = total.add(&term)?;
    }
    Ok(total)
}
