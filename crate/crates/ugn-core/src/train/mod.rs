//! Training: loss assembly, the WNAdam optimizer, the piecewise learning-
//! rate schedule, and the augmentation pipeline.

mod augment;
mod epoch;
mod loss;
mod optimizer;

pub use augment::augment_sample;
pub use epoch::{train_epoch, EpochStats};
pub use loss::total_loss;
pub use optimizer::{WnAdam, WnAdamSlot};

use crate::error::{Error, Result};
use crate::uncertainty::UncertaintyConfig;

/// Photometric and geometric augmentation ranges. All ranges are symmetric
/// about the identity and conservative enough to keep images in-domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Maximum hue rotation, as a fraction of the full circle.
    pub hue_shift: f64,
    /// Contrast scale range about the image mean, `lo <= 1 <= hi`.
    pub contrast: (f64, f64),
    /// Maximum absolute brightness offset.
    pub brightness: f64,
    /// Standard deviation of additive gaussian noise (images live in [0,1]).
    pub noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hue_shift: 0.05,
            contrast: (0.8, 1.25),
            brightness: 0.1,
            noise_std: 0.02,
        }
    }
}

impl AugmentConfig {
    fn validate(&self) -> Result<()> {
        const OP: &str = "AugmentConfig";
        if !(0.0..=0.5).contains(&self.hue_shift) {
            return Err(Error::contract(
                OP,
                format!("hue_shift must lie in [0, 0.5], got {}", self.hue_shift),
            ));
        }
        let (lo, hi) = self.contrast;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return Err(Error::contract(
                OP,
                format!("contrast range must satisfy 0 < lo <= 1 <= hi, got ({lo}, {hi})"),
            ));
        }
        if !(0.0..=1.0).contains(&self.brightness) {
            return Err(Error::contract(
                OP,
                format!("brightness offset must lie in [0, 1], got {}", self.brightness),
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_std) {
            return Err(Error::contract(
                OP,
                format!("noise_std must lie in [0, 1], got {}", self.noise_std),
            ));
        }
        Ok(())
    }

    /// Disables every photometric perturbation (geometric ops remain).
    pub fn photometric_off() -> AugmentConfig {
        AugmentConfig {
            hue_shift: 0.0,
            contrast: (1.0, 1.0),
            brightness: 0.0,
            noise_std: 0.0,
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of passes over the dataset.
    pub epochs: usize,
    /// Random crops drawn per source image per epoch.
    pub crops_per_image: usize,
    /// Square crop extent in pixels; must be a positive multiple of 32.
    pub crop_size: usize,
    /// Base learning rate before scheduling.
    pub base_lr: f64,
    /// WNAdam momentum coefficient.
    pub beta1: f64,
    /// `(fraction_of_epochs, factor)` pairs, ascending; once the epoch
    /// reaches `fraction * epochs` (inclusive) the rate is `base_lr * factor`.
    pub milestones: Vec<(f64, f64)>,
    pub augment: AugmentConfig,
    /// Weight of the per-level uncertainty term.
    pub lambda_unc: f64,
    /// Weight of the per-level classification term.
    pub lambda_ce: f64,
    /// Monte-Carlo sampling settings for the forward pass and the loss.
    pub uncertainty: UncertaintyConfig,
    /// Optional cap on the total number of optimization steps; training
    /// stops mid-epoch when it is reached.
    pub max_steps: Option<usize>,
    /// Master seed; every crop derives its own stream from it.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            crops_per_image: 8,
            crop_size: 64,
            base_lr: 0.01,
            beta1: 0.9,
            milestones: vec![(0.60, 0.1), (0.85, 0.01)],
            augment: AugmentConfig::default(),
            lambda_unc: 1.0,
            lambda_ce: 1.0,
            uncertainty: UncertaintyConfig::default(),
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks every field against its documented range.
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "TrainConfig";
        if self.epochs == 0 {
            return Err(Error::contract(OP, "epochs must be positive"));
        }
        if self.crops_per_image == 0 {
            return Err(Error::contract(OP, "crops_per_image must be positive"));
        }
        if self.crop_size == 0 || self.crop_size % 32 != 0 {
            return Err(Error::contract(
                OP,
                format!(
                    "crop_size must be a positive multiple of 32, got {}",
                    self.crop_size
                ),
            ));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::contract(
                OP,
                format!("base_lr must be non-negative and finite, got {}", self.base_lr),
            ));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(Error::contract(
                OP,
                format!("beta1 must lie in (0, 1), got {}", self.beta1),
            ));
        }
        let mut last = 0.0;
        for &(frac, factor) in &self.milestones {
            if !(0.0..=1.0).contains(&frac) || frac < last {
                return Err(Error::contract(
                    OP,
                    "milestone fractions must ascend within [0, 1]",
                ));
            }
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(Error::contract(
                    OP,
                    format!("milestone factors must be positive, got {factor}"),
                ));
            }
            last = frac;
        }
        if self.lambda_unc < 0.0 || self.lambda_ce < 0.0 {
            return Err(Error::contract(OP, "loss weights must be non-negative"));
        }
        self.augment.validate()?;
        self.uncertainty.validate()
    }
}

/// Piecewise-constant learning rate: `base_lr` scaled by the factor of the
/// last milestone whose epoch threshold (inclusive) has been reached.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::contract(
            "lr_schedule",
            format!("epoch {epoch} out of range for {} epochs", cfg.epochs),
        ));
    }
    let mut factor = 1.0;
    for &(frac, f) in &cfg.milestones {
        if epoch as f64 >= frac * cfg.epochs as f64 {
            factor = f;
        }
    }
    Ok(cfg.base_lr * factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hundred_epochs() -> TrainConfig {
        TrainConfig {
            epochs: 100,
            base_lr: 0.02,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_hits_the_documented_milestones() {
        let cfg = hundred_epochs();
        assert_eq!(lr_schedule(0, &cfg).unwrap(), 0.02);
        assert_eq!(lr_schedule(59, &cfg).unwrap(), 0.02);
        // Milestone boundaries are inclusive.
        assert_eq!(lr_schedule(60, &cfg).unwrap(), 0.002);
        assert_eq!(lr_schedule(84, &cfg).unwrap(), 0.002);
        assert_eq!(lr_schedule(85, &cfg).unwrap(), 0.0002);
        assert_eq!(lr_schedule(99, &cfg).unwrap(), 0.0002);
        assert!(lr_schedule(100, &cfg).is_err());
    }

    #[test]
    fn schedule_handles_fractional_thresholds() {
        let cfg = TrainConfig {
            epochs: 30,
            base_lr: 1.0,
            ..TrainConfig::default()
        };
        // 0.6 * 30 = 18, 0.85 * 30 = 25.5 → first epoch at the lower rate is 26.
        assert_eq!(lr_schedule(17, &cfg).unwrap(), 1.0);
        assert_eq!(lr_schedule(18, &cfg).unwrap(), 0.1);
        assert_eq!(lr_schedule(25, &cfg).unwrap(), 0.1);
        assert_eq!(lr_schedule(26, &cfg).unwrap(), 0.01);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.epochs = 0));
        assert!(bad(|c| c.crop_size = 48));
        assert!(bad(|c| c.base_lr = -0.1));
        assert!(bad(|c| c.beta1 = 1.0));
        assert!(bad(|c| c.milestones = vec![(0.9, 0.1), (0.5, 0.01)]));
        assert!(bad(|c| c.milestones = vec![(0.5, 0.0)]));
        assert!(bad(|c| c.lambda_ce = -1.0));
        assert!(bad(|c| c.augment.hue_shift = 0.6));
        assert!(bad(|c| c.augment.contrast = (0.0, 1.2)));
        assert!(bad(|c| c.augment.contrast = (0.8, 0.9)));
    }
}
