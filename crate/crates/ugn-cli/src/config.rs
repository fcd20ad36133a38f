//! Run configuration: a flat `key = value` file merged with command-line
//! overrides.
//!
//! Every key is declared in one typed schema; anything else is rejected with
//! the offending key and source location, so typos never silently fall back
//! to defaults. The file format allows blank lines and `#` comments, values
//! run to the end of the line, and later `--key value` (or `--key=value`)
//! arguments win over the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ugn_core::net::ModelConfig;
use ugn_core::{AugmentConfig, GammaClassMode, Palette, TrainConfig, UncertaintyConfig};

/// All settings of one `ugn` invocation, merged and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; all randomness (synthesis, init, training, inference)
    /// derives from it.
    pub seed: u64,
    /// Directory that receives every artifact this run produces.
    pub output_dir: PathBuf,
    /// Explicit palette file; empty means "use the palette stored next to
    /// the dataset".
    pub palette: String,
    /// Training split directory; empty means `<output_dir>/train`.
    pub train_dir: String,
    /// Validation split directory; empty means `<output_dir>/val`.
    pub val_dir: String,
    /// Checkpoint consumed by `infer`/`eval`; empty means
    /// `<output_dir>/checkpoint_final.ugn`.
    pub checkpoint: String,
    /// Checkpoint to resume training from; empty starts fresh.
    pub resume: String,

    /// Number of active classes (synthesis and model head width).
    pub classes: usize,
    /// Training images `synth` generates.
    pub synth_count: usize,
    /// Validation images `synth` generates.
    pub synth_val_count: usize,
    /// Synthetic scene extent (square, multiple of 32).
    pub image_size: usize,
    /// Fraction of synthetic pixels blanked to unknown.
    pub unknown_fraction: f64,

    pub epochs: usize,
    pub crops_per_image: usize,
    pub crop_size: usize,
    pub base_lr: f64,
    pub beta1: f64,
    /// Learning-rate milestones as `fraction:factor` pairs.
    pub milestones: Vec<(f64, f64)>,
    pub lambda_ce: f64,
    pub lambda_unc: f64,
    /// Cap on total optimization steps; 0 means unlimited.
    pub max_steps: usize,

    pub hue_shift: f64,
    pub contrast_lo: f64,
    pub contrast_hi: f64,
    pub brightness: f64,
    pub noise_std: f64,

    /// Monte-Carlo sample count T.
    pub samples: usize,
    /// γ class selection: `winner` or `label`.
    pub gamma_mode: GammaClassMode,
    /// Clamp fusion weights `1 - γ` at zero.
    pub clamp_fusion: bool,

    /// Encoder channel widths (stem plus four stages).
    pub widths: [usize; 5],
    pub gate_width: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub log_var_bias: f64,

    /// Trials per operator in the `gradcheck` suite.
    pub gradcheck_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let unc = UncertaintyConfig::default();
        let model = ModelConfig::with_classes(4);
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("ugn-out"),
            palette: String::new(),
            train_dir: String::new(),
            val_dir: String::new(),
            checkpoint: String::new(),
            resume: String::new(),
            classes: 4,
            synth_count: 16,
            synth_val_count: 4,
            image_size: 64,
            unknown_fraction: 0.02,
            epochs: train.epochs,
            crops_per_image: train.crops_per_image,
            crop_size: train.crop_size,
            base_lr: train.base_lr,
            beta1: train.beta1,
            milestones: train.milestones.clone(),
            lambda_ce: train.lambda_ce,
            lambda_unc: train.lambda_unc,
            max_steps: 0,
            hue_shift: train.augment.hue_shift,
            contrast_lo: train.augment.contrast.0,
            contrast_hi: train.augment.contrast.1,
            brightness: train.augment.brightness,
            noise_std: train.augment.noise_std,
            samples: unc.samples,
            gamma_mode: unc.gamma_class_mode,
            clamp_fusion: unc.clamp_fusion_weight,
            widths: model.encoder.widths,
            gate_width: model.encoder.gate_width,
            bn_momentum: model.encoder.bn_momentum,
            bn_eps: model.encoder.bn_eps,
            log_var_bias: model.log_var_bias_init,
            gradcheck_trials: 100,
        }
    }
}

/// Where a key-value pair came from, for error messages.
#[derive(Debug, Clone, Copy)]
enum Source<'a> {
    File { path: &'a Path, line: usize },
    CommandLine,
}

impl std::fmt::Display for Source<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::File { path, line } => write!(f, "{}:{line}", path.display()),
            Source::CommandLine => write!(f, "command line"),
        }
    }
}

impl RunConfig {
    /// Reads an optional config file, applies `--key value` overrides on
    /// top, and validates the result.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            cfg.apply_file(path, &text)?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, path: &Path, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let source = Source::File {
                path,
                line: idx + 1,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{source}: expected `key = value`, got `{line}`"))?;
            self.set(key.trim(), value.trim(), source)?;
        }
        Ok(())
    }

    /// Applies `--key value` / `--key=value` pairs, in order.
    fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        let mut args = overrides.iter();
        while let Some(arg) = args.next() {
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| anyhow!("expected `--key value`, got `{arg}`"))?;
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let value = args
                        .next()
                        .ok_or_else(|| anyhow!("--{flag} is missing a value"))?;
                    (flag.to_string(), value.clone())
                }
            };
            self.set(&key, &value, Source::CommandLine)?;
        }
        Ok(())
    }

    /// Assigns one key, reporting `source` in any error.
    fn set(&mut self, key: &str, value: &str, source: Source<'_>) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str, source: Source<'_>) -> Result<T> {
            value.parse().map_err(|_| {
                anyhow!(
                    "{source}: malformed value `{value}` for key `{key}` \
                     (expected {})",
                    std::any::type_name::<T>()
                )
            })
        }
        match key {
            "seed" => self.seed = parse(key, value, source)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "palette" => self.palette = value.to_string(),
            "train_dir" => self.train_dir = value.to_string(),
            "val_dir" => self.val_dir = value.to_string(),
            "checkpoint" => self.checkpoint = value.to_string(),
            "resume" => self.resume = value.to_string(),
            "classes" => self.classes = parse(key, value, source)?,
            "synth_count" => self.synth_count = parse(key, value, source)?,
            "synth_val_count" => self.synth_val_count = parse(key, value, source)?,
            "image_size" => self.image_size = parse(key, value, source)?,
            "unknown_fraction" => self.unknown_fraction = parse(key, value, source)?,
            "epochs" => self.epochs = parse(key, value, source)?,
            "crops_per_image" => self.crops_per_image = parse(key, value, source)?,
            "crop_size" => self.crop_size = parse(key, value, source)?,
            "base_lr" => self.base_lr = parse(key, value, source)?,
            "beta1" => self.beta1 = parse(key, value, source)?,
            "milestones" => self.milestones = parse_milestones(value, source)?,
            "lambda_ce" => self.lambda_ce = parse(key, value, source)?,
            "lambda_unc" => self.lambda_unc = parse(key, value, source)?,
            "max_steps" => self.max_steps = parse(key, value, source)?,
            "hue_shift" => self.hue_shift = parse(key, value, source)?,
            "contrast_lo" => self.contrast_lo = parse(key, value, source)?,
            "contrast_hi" => self.contrast_hi = parse(key, value, source)?,
            "brightness" => self.brightness = parse(key, value, source)?,
            "noise_std" => self.noise_std = parse(key, value, source)?,
            "samples" => self.samples = parse(key, value, source)?,
            "gamma_mode" => {
                self.gamma_mode = match value {
                    "winner" => GammaClassMode::Winner,
                    "label" => GammaClassMode::Label,
                    other => bail!(
                        "{source}: malformed value `{other}` for key `gamma_mode` \
                         (expected `winner` or `label`)"
                    ),
                }
            }
            "clamp_fusion" => self.clamp_fusion = parse(key, value, source)?,
            "widths" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| parse(key, p.trim(), source))
                    .collect::<Result<_>>()?;
                self.widths = parts.try_into().map_err(|v: Vec<usize>| {
                    anyhow!(
                        "{source}: key `widths` needs exactly 5 comma-separated \
                         values, got {}",
                        v.len()
                    )
                })?;
            }
            "gate_width" => self.gate_width = parse(key, value, source)?,
            "bn_momentum" => self.bn_momentum = parse(key, value, source)?,
            "bn_eps" => self.bn_eps = parse(key, value, source)?,
            "log_var_bias" => self.log_var_bias = parse(key, value, source)?,
            "gradcheck_trials" => self.gradcheck_trials = parse(key, value, source)?,
            other => bail!("{source}: unknown key `{other}`"),
        }
        Ok(())
    }

    /// Checks every field against the ranges the pipeline requires; the
    /// deeper library validators re-check on use, this surfaces mistakes at
    /// parse time with the config vocabulary.
    pub fn validate(&self) -> Result<()> {
        self.train_config()
            .validate()
            .map_err(|e| anyhow!("invalid training settings: {e}"))?;
        self.model_config(self.classes)
            .validate()
            .map_err(|e| anyhow!("invalid model settings: {e}"))?;
        if self.image_size == 0 || self.image_size % 32 != 0 {
            bail!(
                "image_size must be a positive multiple of 32, got {}",
                self.image_size
            );
        }
        if !(0.0..=0.5).contains(&self.unknown_fraction) {
            bail!(
                "unknown_fraction must lie in [0, 0.5], got {}",
                self.unknown_fraction
            );
        }
        if self.gradcheck_trials == 0 {
            bail!("gradcheck_trials must be positive");
        }
        Ok(())
    }

    /// The training settings assembled for the library.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            crops_per_image: self.crops_per_image,
            crop_size: self.crop_size,
            base_lr: self.base_lr,
            beta1: self.beta1,
            milestones: self.milestones.clone(),
            augment: AugmentConfig {
                hue_shift: self.hue_shift,
                contrast: (self.contrast_lo, self.contrast_hi),
                brightness: self.brightness,
                noise_std: self.noise_std,
            },
            lambda_unc: self.lambda_unc,
            lambda_ce: self.lambda_ce,
            uncertainty: self.uncertainty(),
            max_steps: (self.max_steps > 0).then_some(self.max_steps),
            seed: self.seed,
        }
    }

    /// The model skeleton for a given class count.
    pub fn model_config(&self, classes: usize) -> ModelConfig {
        let mut cfg = ModelConfig::with_classes(classes);
        cfg.encoder.widths = self.widths;
        cfg.encoder.gate_width = self.gate_width;
        cfg.encoder.bn_momentum = self.bn_momentum;
        cfg.encoder.bn_eps = self.bn_eps;
        cfg.log_var_bias_init = self.log_var_bias;
        cfg
    }

    /// Monte-Carlo sampling settings.
    pub fn uncertainty(&self) -> UncertaintyConfig {
        UncertaintyConfig {
            samples: self.samples,
            gamma_class_mode: self.gamma_mode,
            clamp_fusion_weight: self.clamp_fusion,
        }
    }

    /// Training split directory (configured or derived).
    pub fn train_dir(&self) -> PathBuf {
        if self.train_dir.is_empty() {
            self.output_dir.join("train")
        } else {
            PathBuf::from(&self.train_dir)
        }
    }

    /// Validation split directory (configured or derived).
    pub fn val_dir(&self) -> PathBuf {
        if self.val_dir.is_empty() {
            self.output_dir.join("val")
        } else {
            PathBuf::from(&self.val_dir)
        }
    }

    /// Checkpoint path for `infer`/`eval` (configured or derived).
    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.is_empty() {
            self.output_dir.join("checkpoint_final.ugn")
        } else {
            PathBuf::from(&self.checkpoint)
        }
    }

    /// Resolves the palette: the explicit `palette` file when set, else the
    /// `palette.txt` stored next to the dataset in `dataset_dir`.
    pub fn load_palette(&self, dataset_dir: &Path) -> Result<Palette> {
        let path = if self.palette.is_empty() {
            dataset_dir.join("palette.txt")
        } else {
            PathBuf::from(&self.palette)
        };
        Palette::read_file(&path).map_err(|e| anyhow!("cannot load palette: {e}"))
    }

    /// Renders the configuration back as a parseable `key = value` file.
    pub fn to_file_string(&self) -> String {
        let milestones = self
            .milestones
            .iter()
            .map(|(f, s)| format!("{f}:{s}"))
            .collect::<Vec<_>>()
            .join(",");
        let widths = self
            .widths
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let gamma_mode = match self.gamma_mode {
            GammaClassMode::Winner => "winner",
            GammaClassMode::Label => "label",
        };
        let mut out = String::new();
        let mut put = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        put("seed", self.seed.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("palette", self.palette.clone());
        put("train_dir", self.train_dir.clone());
        put("val_dir", self.val_dir.clone());
        put("checkpoint", self.checkpoint.clone());
        put("resume", self.resume.clone());
        put("classes", self.classes.to_string());
        put("synth_count", self.synth_count.to_string());
        put("synth_val_count", self.synth_val_count.to_string());
        put("image_size", self.image_size.to_string());
        put("unknown_fraction", self.unknown_fraction.to_string());
        put("epochs", self.epochs.to_string());
        put("crops_per_image", self.crops_per_image.to_string());
        put("crop_size", self.crop_size.to_string());
        put("base_lr", self.base_lr.to_string());
        put("beta1", self.beta1.to_string());
        put("milestones", milestones);
        put("lambda_ce", self.lambda_ce.to_string());
        put("lambda_unc", self.lambda_unc.to_string());
        put("max_steps", self.max_steps.to_string());
        put("hue_shift", self.hue_shift.to_string());
        put("contrast_lo", self.contrast_lo.to_string());
        put("contrast_hi", self.contrast_hi.to_string());
        put("brightness", self.brightness.to_string());
        put("noise_std", self.noise_std.to_string());
        put("samples", self.samples.to_string());
        put("gamma_mode", gamma_mode.to_string());
        put("clamp_fusion", self.clamp_fusion.to_string());
        put("widths", widths);
        put("gate_width", self.gate_width.to_string());
        put("bn_momentum", self.bn_momentum.to_string());
        put("bn_eps", self.bn_eps.to_string());
        put("log_var_bias", self.log_var_bias.to_string());
        put("gradcheck_trials", self.gradcheck_trials.to_string());
        out
    }
}

/// Parses `fraction:factor` pairs separated by commas; an empty value means
/// a constant learning rate.
fn parse_milestones(value: &str, source: Source<'_>) -> Result<Vec<(f64, f64)>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|pair| {
            let (frac, factor) = pair.trim().split_once(':').ok_or_else(|| {
                anyhow!(
                    "{source}: malformed milestone `{pair}` for key `milestones` \
                     (expected `fraction:factor`)"
                )
            })?;
            let frac: f64 = frac.trim().parse().map_err(|_| {
                anyhow!("{source}: malformed milestone fraction `{frac}` for key `milestones`")
            })?;
            let factor: f64 = factor.trim().parse().map_err(|_| {
                anyhow!("{source}: malformed milestone factor `{factor}` for key `milestones`")
            })?;
            Ok((frac, factor))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn config_file(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("run.cfg");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn empty_file_yields_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = config_file(dir.path(), "# nothing here\n\n");
        let cfg = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn command_line_overrides_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = config_file(dir.path(), "epochs = 5\nseed = 3\n");
        let cfg = RunConfig::load(
            Some(&path),
            &["--epochs".into(), "7".into(), "--base_lr=0.5".into()],
        )
        .unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.base_lr, 0.5);
    }

    #[test]
    fn unknown_key_is_an_error_naming_key_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = config_file(dir.path(), "seed = 1\nepocs = 5\n");
        let err = RunConfig::load(Some(&path), &[]).unwrap_err().to_string();
        assert!(err.contains("unknown key `epocs`"), "{err}");
        assert!(err.contains(":2"), "{err}");
    }

    #[test]
    fn malformed_value_names_key_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = config_file(dir.path(), "\n\nepochs = soon\n");
        let err = RunConfig::load(Some(&path), &[]).unwrap_err().to_string();
        assert!(err.contains("`soon`"), "{err}");
        assert!(err.contains("`epochs`"), "{err}");
        assert!(err.contains(":3"), "{err}");
    }

    #[test]
    fn crop_size_must_be_a_multiple_of_32() {
        let dir = tempfile::tempdir().unwrap();
        let path = config_file(dir.path(), "crop_size = 50\n");
        let err = RunConfig::load(Some(&path), &[]).unwrap_err().to_string();
        assert!(err.contains("crop_size"), "{err}");
    }

    #[test]
    fn unknown_override_key_is_rejected() {
        let err = RunConfig::load(None, &["--sede=1".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown key `sede`"), "{err}");
        assert!(err.contains("command line"), "{err}");
    }

    #[test]
    fn override_without_value_is_rejected() {
        let err = RunConfig::load(None, &["--epochs".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing a value"), "{err}");
    }

    #[test]
    fn milestones_and_widths_round_trip_through_render() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            milestones: vec![(0.5, 0.2)],
            widths: [4, 4, 8, 8, 16],
            gamma_mode: GammaClassMode::Label,
            seed: 42,
            ..RunConfig::default()
        };
        let path = config_file(dir.path(), &cfg.to_file_string());
        let parsed = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn derived_paths_follow_output_dir() {
        let cfg = RunConfig::load(None, &["--output_dir".into(), "runs/a".into()]).unwrap();
        assert_eq!(cfg.train_dir(), Path::new("runs/a/train"));
        assert_eq!(cfg.val_dir(), Path::new("runs/a/val"));
        assert_eq!(
            cfg.checkpoint_path(),
            Path::new("runs/a/checkpoint_final.ugn")
        );
        let cfg = RunConfig::load(None, &["--val_dir".into(), "elsewhere".into()]).unwrap();
        assert_eq!(cfg.val_dir(), Path::new("elsewhere"));
    }

    #[test]
    fn gamma_mode_accepts_only_the_two_modes() {
        let cfg = RunConfig::load(None, &["--gamma_mode=label".into()]).unwrap();
        assert_eq!(cfg.gamma_mode, GammaClassMode::Label);
        let err = RunConfig::load(None, &["--gamma_mode=oracle".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("gamma_mode"), "{err}");
    }
}
