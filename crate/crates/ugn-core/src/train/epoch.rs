//! One training epoch: crops, forward passes, loss, backward, updates.
//!
//! Every crop owns two derived random streams — one for augmentation, one
//! for the Monte-Carlo logit sampling — keyed by `(epoch, image, crop)`, so
//! a run is reproducible from the master seed alone and crops could be
//! prepared concurrently without changing the result.

use crate::data::SegSample;
use crate::error::{Error, Result};
use crate::net::UgnModel;
use crate::rngstream::derive_rng;
use crate::scalar::Scalar;
use crate::train::{augment_sample, lr_schedule, total_loss, TrainConfig, WnAdam};

/// Aggregates of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Learning rate the schedule assigned to this epoch.
    pub lr: f64,
    /// Optimization steps actually taken.
    pub steps: usize,
    /// Mean loss over the epoch's steps.
    pub mean_loss: f64,
    /// Mean γ per level index (0 = finest grid), averaged over steps.
    pub mean_gamma: Vec<f64>,
}

/// Runs one pass of `crops_per_image` augmented crops per dataset image.
///
/// `global_step` counts optimization steps across epochs; when the config
/// caps total steps the epoch stops mid-pass once the cap is reached. Crops
/// that end up with no labeled pixel at all are skipped without consuming a
/// step (they carry no training signal).
pub fn train_epoch<T: Scalar>(
    model: &UgnModel<T>,
    dataset: &[SegSample],
    cfg: &TrainConfig,
    opt: &mut WnAdam<T>,
    epoch: usize,
    global_step: &mut usize,
) -> Result<EpochStats> {
    const OP: &str = "train_epoch";
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract(OP, "dataset is empty"));
    }
    let lr = lr_schedule(epoch, cfg)?;
    let params = model.parameters();
    let mut steps = 0usize;
    let mut loss_sum = 0.0f64;
    let mut gamma_sum: Vec<f64> = Vec::new();

    'pass: for (image_idx, source) in dataset.iter().enumerate() {
        for crop_idx in 0..cfg.crops_per_image {
            if let Some(cap) = cfg.max_steps {
                if *global_step >= cap {
                    break 'pass;
                }
            }
            let coords = [epoch as u64, image_idx as u64, crop_idx as u64];
            let mut aug_rng = derive_rng(cfg.seed, "augment", &coords);
            let crop = augment_sample(source, cfg, &mut aug_rng)?;
            if crop.valid.iter().all(|&v| !v) {
                continue;
            }
            let x = crop.image_tensor::<T>()?;
            let pyramid = model.encoder.forward(&x, true)?;
            let mut mc_rng = derive_rng(cfg.seed, "mc", &coords);
            let levels = model.gate_refine(&pyramid, &cfg.uncertainty, &mut mc_rng)?;
            let loss = total_loss(
                &levels,
                &crop.mask,
                &crop.valid,
                (crop.height, crop.width),
                cfg,
            )
            .map_err(|e| {
                Error::domain(
                    OP,
                    format!("epoch {epoch}, image {image_idx}, crop {crop_idx}: {e}"),
                )
            })?;
            loss.backward()?;
            opt.step(&params, T::from_f64(lr))?;

            loss_sum += loss.item()?.to_f64();
            if gamma_sum.is_empty() {
                gamma_sum = vec![0.0; levels.len()];
            }
            for lv in &levels {
                let g = lv.gamma.values();
                let mean = g.data().iter().map(|v| v.to_f64()).sum::<f64>()
                    / g.numel() as f64;
                gamma_sum[lv.level] += mean;
            }
            steps += 1;
            *global_step += 1;
        }
    }

    if steps == 0 {
        return Err(Error::contract(
            OP,
            "no steps taken (step cap exhausted or no labeled crops)",
        ));
    }
    Ok(EpochStats {
        epoch,
        lr,
        steps,
        mean_loss: loss_sum / steps as f64,
        mean_gamma: gamma_sum.iter().map(|s| s / steps as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, Palette, SynthConfig};
    use crate::net::{fuse_levels, ModelConfig};
    use crate::train::AugmentConfig;
    use crate::uncertainty::UncertaintyConfig;

    fn tiny_dataset(count: usize, seed: u64) -> Vec<SegSample> {
        let palette = Palette::land_cover_subset(2).unwrap();
        let cfg = SynthConfig {
            height: 32,
            width: 32,
            classes: 2,
            unknown_fraction: 0.02,
        };
        synth_generate(count, &cfg, &palette, seed).unwrap()
    }

    fn tiny_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 4,
            crops_per_image: 2,
            crop_size: 32,
            base_lr: 0.01,
            uncertainty: UncertaintyConfig {
                samples: 2,
                ..UncertaintyConfig::default()
            },
            seed,
            ..TrainConfig::default()
        }
    }

    fn tiny_model(seed: u64) -> UgnModel<f64> {
        let mut rng = derive_rng(seed, "epoch-test-model", &[]);
        UgnModel::new(&ModelConfig::with_classes(2), &mut rng).unwrap()
    }

    fn checksum(model: &UgnModel<f64>) -> Vec<Vec<f64>> {
        model.parameters().iter().map(|p| p.data()).collect()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let model = tiny_model(1);
        let data = tiny_dataset(2, 11);
        let cfg = TrainConfig {
            base_lr: 0.0,
            ..tiny_cfg(3)
        };
        let mut opt = WnAdam::new(cfg.beta1).unwrap();
        let before = checksum(&model);
        let mut step = 0;
        let stats = train_epoch(&model, &data, &cfg, &mut opt, 0, &mut step).unwrap();
        assert_eq!(checksum(&model), before);
        assert_eq!(stats.steps, 4);
        assert_eq!(step, 4);
        // The optimizer still advanced its bookkeeping.
        assert_eq!(opt.steps(), 4);
    }

    #[test]
    fn same_seed_reproduces_metrics_and_weights() {
        let data = tiny_dataset(2, 12);
        let run = || {
            let model = tiny_model(2);
            let cfg = tiny_cfg(4);
            let mut opt = WnAdam::new(cfg.beta1).unwrap();
            let mut step = 0;
            let stats = train_epoch(&model, &data, &cfg, &mut opt, 0, &mut step).unwrap();
            (stats, checksum(&model))
        };
        let (stats_a, weights_a) = run();
        let (stats_b, weights_b) = run();
        assert_eq!(stats_a, stats_b);
        assert_eq!(weights_a, weights_b);
        assert_eq!(stats_a.mean_gamma.len(), 5);
        assert!(stats_a.mean_loss.is_finite());
        assert!(stats_a.mean_gamma.iter().all(|g| g.is_finite() && *g >= 0.0));
    }

    #[test]
    fn two_epochs_reduce_the_mean_loss() {
        let model = tiny_model(3);
        let data = tiny_dataset(2, 13);
        let cfg = tiny_cfg(5);
        let mut opt = WnAdam::new(cfg.beta1).unwrap();
        let mut step = 0;
        let first = train_epoch(&model, &data, &cfg, &mut opt, 0, &mut step).unwrap();
        let mut second = first.clone();
        for epoch in 1..4 {
            second = train_epoch(&model, &data, &cfg, &mut opt, epoch, &mut step).unwrap();
        }
        assert!(
            second.mean_loss < first.mean_loss,
            "loss went from {} to {}",
            first.mean_loss,
            second.mean_loss
        );
    }

    #[test]
    fn step_cap_stops_mid_epoch() {
        let model = tiny_model(4);
        let data = tiny_dataset(2, 14);
        let cfg = TrainConfig {
            max_steps: Some(3),
            ..tiny_cfg(6)
        };
        let mut opt = WnAdam::new(cfg.beta1).unwrap();
        let mut step = 0;
        let stats = train_epoch(&model, &data, &cfg, &mut opt, 0, &mut step).unwrap();
        assert_eq!(stats.steps, 3);
        assert_eq!(step, 3);
        // Nothing left for the next epoch.
        let err = train_epoch(&model, &data, &cfg, &mut opt, 1, &mut step).unwrap_err();
        assert!(err.to_string().contains("no steps taken"), "{err}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let model = tiny_model(5);
        let cfg = tiny_cfg(7);
        let mut opt = WnAdam::new(cfg.beta1).unwrap();
        let mut step = 0;
        assert!(train_epoch(&model, &[], &cfg, &mut opt, 0, &mut step).is_err());
    }

    #[test]
    fn uncertainty_only_loss_trains_heads_but_not_fusion_weights() {
        // With λ_ce = 0 the loss reaches the heads exclusively through γ.
        // Adding the fused prediction to the loss must not change the
        // log-variance head gradients at all: the fusion weights use
        // stop-gradient γ and the softmax path never touches log-variances.
        let model = tiny_model(6);
        let data = tiny_dataset(1, 15);
        let cfg = TrainConfig {
            lambda_ce: 0.0,
            augment: AugmentConfig::photometric_off(),
            ..tiny_cfg(8)
        };
        let mut aug_rng = derive_rng(cfg.seed, "augment", &[0, 0, 0]);
        let crop = augment_sample(&data[0], &cfg, &mut aug_rng).unwrap();
        let x = crop.image_tensor::<f64>().unwrap();
        let pyramid = model.encoder.forward(&x, true).unwrap();
        let mut mc_rng = derive_rng(cfg.seed, "mc", &[0, 0, 0]);
        let levels = model.gate_refine(&pyramid, &cfg.uncertainty, &mut mc_rng).unwrap();
        let loss = total_loss(
            &levels,
            &crop.mask,
            &crop.valid,
            (crop.height, crop.width),
            &cfg,
        )
        .unwrap();

        let logvar_params: Vec<_> = model
            .parameters()
            .into_iter()
            .filter(|p| p.name().contains(".logvar."))
            .collect();
        assert!(!logvar_params.is_empty());

        loss.backward().unwrap();
        let plain: Vec<Vec<f64>> = logvar_params
            .iter()
            .map(|p| p.grad().expect("γ path reaches log-variance heads"))
            .collect();
        assert!(plain.iter().flatten().any(|&g| g != 0.0));

        let fine = (pyramid.g[0].shape()[2], pyramid.g[0].shape()[3]);
        let fused = fuse_levels(&levels, fine, true).unwrap();
        let with_fused = loss.add(&fused.sum_all().unwrap()).unwrap();
        with_fused.backward().unwrap();
        let extended: Vec<Vec<f64>> = logvar_params
            .iter()
            .map(|p| p.grad().expect("still reached"))
            .collect();
        assert_eq!(plain, extended, "fusion weights leaked gradient into log-variances");

        // One optimizer step on the real loss moves both head kinds.
        let head_params: Vec<_> = model
            .parameters()
            .into_iter()
            .filter(|p| p.name().starts_with("head"))
            .collect();
        let before: Vec<Vec<f64>> = head_params.iter().map(|p| p.data()).collect();
        loss.backward().unwrap();
        let mut opt = WnAdam::new(cfg.beta1).unwrap();
        opt.step(&model.parameters(), 0.01).unwrap();
        let after: Vec<Vec<f64>> = head_params.iter().map(|p| p.data()).collect();
        let changed = before
            .iter()
            .zip(&after)
            .filter(|(b, a)| b != a)
            .count();
        assert!(changed > 0, "uncertainty loss alone must move head weights");
    }
}
