//! The gated network: per-level head pairs, the uncertainty-gated
//! refinement chain, γ-weighted fusion, and whole-image prediction.

use super::encoder::{ConvLayer, Encoder, EncoderConfig, FeaturePyramid};
use super::param::Parameter;
use crate::error::{Error, Result};
use crate::nn::upsample_nearest;
use crate::scalar::Scalar;
use crate::tensor::{argmax_axis, Tensor};
use crate::uncertainty::{gamma_map, sample_logits, GammaClassMode, GammaMap, UncertaintyConfig};
use rand::Rng;
use std::cell::RefCell;
use std::rc::Rc;

/// Everything needed to rebuild a model skeleton.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub num_classes: usize,
    /// Initial bias of every log-variance head; moderately negative starts
    /// the predicted noise small without saturating the gates.
    pub log_var_bias_init: f64,
}

impl ModelConfig {
    /// Default desk-scale configuration for a given class count.
    pub fn with_classes(num_classes: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig::default(),
            num_classes,
            log_var_bias_init: -2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::contract(
                "model",
                format!("num_classes must be in [2,256], got {}", self.num_classes),
            ));
        }
        if !self.log_var_bias_init.is_finite() {
            return Err(Error::contract(
                "model",
                "log_var_bias_init must be finite",
            ));
        }
        Ok(())
    }
}

/// The two 1×1 heads of one level: class logits and per-class log-variance.
pub struct HeadPair<T: Scalar> {
    logit: ConvLayer<T>,
    log_var: ConvLayer<T>,
}

impl<T: Scalar> HeadPair<T> {
    /// Fresh heads mapping `in_width` feature channels to `classes` outputs.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_width: usize,
        classes: usize,
        log_var_bias_init: f64,
        rng: &mut R,
    ) -> Result<HeadPair<T>> {
        Ok(HeadPair {
            logit: ConvLayer::init(&format!("{name}.logit"), in_width, classes, 1, 1, 0, Some(0.0), rng)?,
            log_var: ConvLayer::init(
                &format!("{name}.logvar"),
                in_width,
                classes,
                1,
                1,
                0,
                Some(log_var_bias_init),
                rng,
            )?,
        })
    }

    /// Applies both heads, returning `(logits, log_variance)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((self.logit.forward(x)?, self.log_var.forward(x)?))
    }

    pub(crate) fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.logit.collect_params(out);
        self.log_var.collect_params(out);
    }
}

/// One level of the refinement chain.
///
/// For level `j ≥ 1` the heads see the upsampled memory `b_j` and `b_bar`
/// holds the refined memory `b̄_{j-1}` handed to the next-finer level; for
/// level 0 the heads see `b̄_0` and `b_bar` is `b̄_0` itself. Within one
/// output, `logits`, `log_var`, `gamma` and `b_bar` share a grid.
#[derive(Debug)]
pub struct GateLevelOutput<T: Scalar> {
    pub level: usize,
    /// `[N,C,h,w]` class logits l.
    pub logits: Tensor<T>,
    /// `[N,C,h,w]` log-variance s.
    pub log_var: Tensor<T>,
    /// `[T,N,C,h,w]` reparameterized logit samples, kept so the training
    /// loss can recompute γ against labels without re-drawing noise.
    pub lhat: Tensor<T>,
    pub gamma: GammaMap<T>,
    /// `[N,D,h,w]` refined features.
    pub b_bar: Tensor<T>,
}

/// Runs the refinement chain over a pyramid of any depth (production form:
/// gate gradients blocked).
///
/// Starting from `b̄ = g[last]`, each step upsamples the memory onto the
/// next-finer grid, applies that level's heads, derives a winner-mode γ, and
/// admits the finer feature through the gate:
/// `b̄_{j-1} = stop_gradient(γ^(j)) ⊙ g_{j-1} + b_j`. The finest level runs
/// its heads on the final memory. Levels are returned coarsest first.
pub fn gate_refine<T: Scalar, R: Rng + ?Sized>(
    g: &[Tensor<T>],
    heads: &[HeadPair<T>],
    cfg: &UncertaintyConfig,
    rng: &mut R,
) -> Result<Vec<GateLevelOutput<T>>> {
    gate_refine_with(g, heads, cfg, rng, true)
}

/// [`gate_refine`] with the γ detachment explicit. `detach_gamma: false`
/// leaves the gates differentiable, which finite-difference checks need;
/// training and inference use the blocked form.
pub fn gate_refine_with<T: Scalar, R: Rng + ?Sized>(
    g: &[Tensor<T>],
    heads: &[HeadPair<T>],
    cfg: &UncertaintyConfig,
    rng: &mut R,
    detach_gamma: bool,
) -> Result<Vec<GateLevelOutput<T>>> {
    cfg.validate()?;
    if g.is_empty() {
        return Err(Error::contract("gate_refine", "pyramid has no levels"));
    }
    if heads.len() != g.len() {
        return Err(Error::contract(
            "gate_refine",
            format!("{} pyramid levels but {} head pairs", g.len(), heads.len()),
        ));
    }
    // The gate itself never sees labels; label-mode γ only enters the loss.
    let gate_cfg = UncertaintyConfig {
        gamma_class_mode: GammaClassMode::Winner,
        ..*cfg
    };

    let top = g.len() - 1;
    let mut outs = Vec::with_capacity(g.len());
    let mut b_bar = g[top].clone();
    for j in (1..=top).rev() {
        let (bh, bw) = (b_bar.shape()[2], b_bar.shape()[3]);
        let (th, tw) = (g[j - 1].shape()[2], g[j - 1].shape()[3]);
        if th % bh != 0 || tw != bw * (th / bh) {
            return Err(Error::shape(
                "gate_refine",
                format!("cannot upsample {bh}x{bw} memory onto the {th}x{tw} grid of level {}", j - 1),
            ));
        }
        let b_j = upsample_nearest(&b_bar, th / bh)?;
        let (l, s) = heads[j].forward(&b_j)?;
        let lhat = sample_logits(&l, &s, gate_cfg.samples, rng)?;
        let gamma = gamma_map(&lhat, &gate_cfg, None)?;
        let gate = if detach_gamma {
            gamma.values().stop_gradient()
        } else {
            gamma.values().clone()
        };
        let b_next = gate.mul(&g[j - 1])?.add(&b_j)?;
        outs.push(GateLevelOutput {
            level: j,
            logits: l,
            log_var: s,
            lhat,
            gamma,
            b_bar: b_next.clone(),
        });
        b_bar = b_next;
    }
    let (l, s) = heads[0].forward(&b_bar)?;
    let lhat = sample_logits(&l, &s, gate_cfg.samples, rng)?;
    let gamma = gamma_map(&lhat, &gate_cfg, None)?;
    outs.push(GateLevelOutput {
        level: 0,
        logits: l,
        log_var: s,
        lhat,
        gamma,
        b_bar,
    });
    Ok(outs)
}

/// Fuses per-level class scores onto the `target` grid:
/// `(1/levels) Σ_i softmax(l^(i)) · w_i` with `w_i = 1 − γ^(i)`, clamped at
/// zero when `clamp` is set. γ is detached: fusion weights carry no
/// gradient.
pub fn fuse_levels<T: Scalar>(
    levels: &[GateLevelOutput<T>],
    target: (usize, usize),
    clamp: bool,
) -> Result<Tensor<T>> {
    if levels.is_empty() {
        return Err(Error::contract("fuse_levels", "no levels to fuse"));
    }
    let norm = T::ONE / T::from_usize(levels.len());
    fuse_levels_with(levels, target, clamp, norm, true)
}

/// [`fuse_levels`] with the positive normalizer and the γ detachment
/// explicit. Any positive normalizer yields the same argmax; the
/// undetached form exists for finite-difference checks.
pub fn fuse_levels_with<T: Scalar>(
    levels: &[GateLevelOutput<T>],
    target: (usize, usize),
    clamp: bool,
    normalizer: T,
    detach_gamma: bool,
) -> Result<Tensor<T>> {
    if levels.is_empty() {
        return Err(Error::contract("fuse_levels", "no levels to fuse"));
    }
    if !(normalizer.to_f64() > 0.0) {
        return Err(Error::contract(
            "fuse_levels",
            format!("normalizer must be positive, got {normalizer}"),
        ));
    }
    let (th, tw) = target;
    let mut acc: Option<Tensor<T>> = None;
    for lv in levels {
        let (h, w) = (lv.logits.shape()[2], lv.logits.shape()[3]);
        if th % h != 0 || tw != w * (th / h) {
            return Err(Error::shape(
                "fuse_levels",
                format!("target {th}x{tw} is not a multiple of the {h}x{w} grid of level {}", lv.level),
            ));
        }
        let factor = th / h;
        let p = upsample_nearest(&lv.logits.softmax(1)?, factor)?;
        let gamma = if detach_gamma {
            lv.gamma.values().stop_gradient()
        } else {
            lv.gamma.values().clone()
        };
        let mut weight = upsample_nearest(&gamma, factor)?.affine(-T::ONE, T::ONE)?;
        if clamp {
            weight = weight.relu()?;
        }
        let term = p.mul(&weight)?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    acc.expect("levels checked non-empty").affine(normalizer, T::ZERO)
}

/// Result of whole-image prediction.
#[derive(Debug)]
pub struct Prediction<T: Scalar> {
    pub height: usize,
    pub width: usize,
    /// Row-major `[H,W]` class indices.
    pub class_map: Vec<u8>,
    /// `[1,C,H,W]` fused scores.
    pub fused: Tensor<T>,
    /// Per-level γ upsampled to the input grid, coarsest level first, as
    /// `(level, [1,1,H,W])`.
    pub gamma_levels: Vec<(usize, Tensor<T>)>,
}

/// The full network: encoder plus five per-level head pairs.
pub struct UgnModel<T: Scalar> {
    pub encoder: Encoder<T>,
    heads: Vec<HeadPair<T>>,
    cfg: ModelConfig,
}

impl<T: Scalar> UgnModel<T> {
    /// Builds a fresh model, drawing weights from `rng` in declaration
    /// order: encoder first, then the heads from level 0 up.
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<UgnModel<T>> {
        cfg.validate()?;
        let encoder = Encoder::new(&cfg.encoder, rng)?;
        let mut heads = Vec::with_capacity(5);
        for j in 0..5 {
            heads.push(HeadPair::new(
                &format!("head{j}"),
                cfg.encoder.gate_width,
                cfg.num_classes,
                cfg.log_var_bias_init,
                rng,
            )?);
        }
        Ok(UgnModel {
            encoder,
            heads,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    pub fn heads(&self) -> &[HeadPair<T>] {
        &self.heads
    }

    /// Every learnable parameter in a stable order (encoder, then heads).
    pub fn parameters(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::new();
        self.encoder.collect_params(&mut out);
        for head in &self.heads {
            head.collect_params(&mut out);
        }
        out
    }

    /// Looks a parameter up by its canonical name.
    pub fn parameter(&self, name: &str) -> Option<Parameter<T>> {
        self.parameters().into_iter().find(|p| p.name() == name)
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(Parameter::numel).sum()
    }

    /// Non-learnable state (batchnorm running statistics) by name.
    pub fn buffers(&self) -> Vec<(String, Rc<RefCell<Vec<T>>>)> {
        let mut out = Vec::new();
        self.encoder.collect_buffers(&mut out);
        out
    }

    /// Refinement chain over an encoder pyramid (production form).
    pub fn gate_refine<R: Rng + ?Sized>(
        &self,
        pyramid: &FeaturePyramid<T>,
        cfg: &UncertaintyConfig,
        rng: &mut R,
    ) -> Result<Vec<GateLevelOutput<T>>> {
        gate_refine(&pyramid.g, &self.heads, cfg, rng)
    }

    /// Segments one `[1,3,H,W]` image: encoder in eval mode, refinement
    /// chain, fusion on the stride-4 grid, nearest upsample back to the
    /// input grid, per-pixel argmax (ties to the lowest class).
    pub fn predict_image<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        cfg: &UncertaintyConfig,
        rng: &mut R,
    ) -> Result<Prediction<T>> {
        if x.rank() != 4 || x.shape()[0] != 1 || x.shape()[1] != 3 {
            return Err(Error::shape(
                "predict_image",
                format!("input must be [1,3,H,W], got {:?}", x.shape()),
            ));
        }
        let (h, w) = (x.shape()[2], x.shape()[3]);
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            let ph = h.max(1).div_ceil(32) * 32;
            let pw = w.max(1).div_ceil(32) * 32;
            return Err(Error::data(format!(
                "predict_image: input is {h}x{w}, but extents must be divisible by 32; pad the image to {ph}x{pw}"
            )));
        }
        let pyramid = self.encoder.forward(x, false)?;
        let levels = self.gate_refine(&pyramid, cfg, rng)?;
        let fine = (pyramid.g[0].shape()[2], pyramid.g[0].shape()[3]);
        let fused_coarse = fuse_levels(&levels, fine, cfg.clamp_fusion_weight)?;
        let fused = upsample_nearest(&fused_coarse, 4)?;
        let class_map = argmax_axis(&fused, 1)?
            .into_iter()
            .map(|c| c as u8)
            .collect();
        let mut gamma_levels = Vec::with_capacity(levels.len());
        for lv in &levels {
            let gh = lv.gamma.values().shape()[2];
            let full = upsample_nearest(&lv.gamma.values().stop_gradient(), h / gh)?;
            gamma_levels.push((lv.level, full));
        }
        Ok(Prediction {
            height: h,
            width: w,
            class_map,
            fused,
            gamma_levels,
        })
    }
}
