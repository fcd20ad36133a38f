//! ResNet-18-shaped convolutional encoder producing a five-level feature
//! pyramid at strides 4, 4, 8, 16 and 32, each level projected to a common
//! gate width.

use super::param::Parameter;
use crate::error::{Error, Result};
use crate::nn::{batchnorm2d, conv2d, maxpool2d, BatchNormState, Conv2dParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use std::cell::RefCell;
use std::rc::Rc;

/// Encoder hyperparameters.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    /// Channel widths after the stem and after each of the four stages.
    pub widths: [usize; 5],
    /// Common width D that every pyramid level is projected to.
    pub gate_width: usize,
    /// Fraction of the old running statistic kept per batchnorm update.
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            widths: [8, 8, 16, 32, 64],
            gate_width: 8,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.iter().any(|&w| w == 0) || self.gate_width == 0 {
            return Err(Error::contract(
                "encoder",
                "channel widths and gate width must be at least 1",
            ));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::contract(
                "encoder",
                format!("bn_momentum must be in (0,1), got {}", self.bn_momentum),
            ));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::contract(
                "encoder",
                format!("bn_eps must be positive, got {}", self.bn_eps),
            ));
        }
        Ok(())
    }
}

/// The five projected feature maps `g_0…g_4`, all `[N,D,·,·]`, at strides
/// 4, 4, 8, 16 and 32 relative to the input: extents halve level to level
/// except between `g_0` and `g_1`, which share a grid.
#[derive(Debug)]
pub struct FeaturePyramid<T: Scalar> {
    pub g: Vec<Tensor<T>>,
}

/// A convolution with owned parameters.
pub(crate) struct ConvLayer<T: Scalar> {
    weight: Parameter<T>,
    bias: Option<Parameter<T>>,
    stride: usize,
    padding: usize,
}

impl<T: Scalar> ConvLayer<T> {
    /// He-normal weight initialization (std `sqrt(2 / (in_c·k²))`); the bias,
    /// when present, starts at a constant.
    pub(crate) fn init<R: Rng + ?Sized>(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias_init: Option<f64>,
        rng: &mut R,
    ) -> Result<ConvLayer<T>> {
        let std = T::from_f64((2.0 / (in_c * k * k) as f64).sqrt());
        let shape = [out_c, in_c, k, k];
        let draws = Tensor::<T>::randn(&shape, rng)?;
        let data: Vec<T> = draws.data().iter().map(|&v| v * std).collect();
        let weight = Parameter::new(format!("{name}.weight"), Tensor::leaf(&shape, data)?)?;
        let bias = match bias_init {
            Some(b0) => Some(Parameter::new(
                format!("{name}.bias"),
                Tensor::leaf(&[out_c], vec![T::from_f64(b0); out_c])?,
            )?),
            None => None,
        };
        Ok(ConvLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(
            x,
            &Conv2dParams {
                kernel: self.weight.value(),
                bias: self.bias.as_ref().map(Parameter::value),
                stride: self.stride,
                padding: self.padding,
            },
        )
    }

    pub(crate) fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }
}

/// Batch normalization with owned affine parameters and persistent running
/// statistics.
pub(crate) struct BnLayer<T: Scalar> {
    name: String,
    scale: Parameter<T>,
    shift: Parameter<T>,
    running_mean: Rc<RefCell<Vec<T>>>,
    running_var: Rc<RefCell<Vec<T>>>,
    momentum: T,
    eps: T,
}

impl<T: Scalar> BnLayer<T> {
    pub(crate) fn init(name: &str, channels: usize, momentum: T, eps: T) -> Result<BnLayer<T>> {
        let st = BatchNormState::new(channels, momentum, eps)?;
        Ok(BnLayer {
            name: name.to_string(),
            scale: Parameter::new(format!("{name}.scale"), st.scale)?,
            shift: Parameter::new(format!("{name}.shift"), st.shift)?,
            running_mean: st.running_mean,
            running_var: st.running_var,
            momentum,
            eps,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let st = BatchNormState::from_parts(
            self.scale.value(),
            self.shift.value(),
            Rc::clone(&self.running_mean),
            Rc::clone(&self.running_var),
            self.momentum,
            self.eps,
        )?;
        batchnorm2d(x, &st, training)
    }

    pub(crate) fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        out.push(self.scale.clone());
        out.push(self.shift.clone());
    }

    pub(crate) fn collect_buffers(&self, out: &mut Vec<(String, Rc<RefCell<Vec<T>>>)>) {
        out.push((
            format!("{}.running_mean", self.name),
            Rc::clone(&self.running_mean),
        ));
        out.push((
            format!("{}.running_var", self.name),
            Rc::clone(&self.running_var),
        ));
    }
}

/// Two 3×3 conv-batchnorm pairs plus a skip connection; the skip is a 1×1
/// strided convolution exactly when the block changes shape.
struct BasicBlock<T: Scalar> {
    conv1: ConvLayer<T>,
    bn1: BnLayer<T>,
    conv2: ConvLayer<T>,
    bn2: BnLayer<T>,
    skip: Option<ConvLayer<T>>,
}

impl<T: Scalar> BasicBlock<T> {
    fn init<R: Rng + ?Sized>(
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
        momentum: T,
        eps: T,
        rng: &mut R,
    ) -> Result<BasicBlock<T>> {
        let conv1 = ConvLayer::init(&format!("{name}.conv1"), in_c, out_c, 3, stride, 1, None, rng)?;
        let bn1 = BnLayer::init(&format!("{name}.bn1"), out_c, momentum, eps)?;
        let conv2 = ConvLayer::init(&format!("{name}.conv2"), out_c, out_c, 3, 1, 1, None, rng)?;
        let bn2 = BnLayer::init(&format!("{name}.bn2"), out_c, momentum, eps)?;
        let skip = if in_c != out_c || stride != 1 {
            Some(ConvLayer::init(
                &format!("{name}.skip"),
                in_c,
                out_c,
                1,
                stride,
                0,
                None,
                rng,
            )?)
        } else {
            None
        };
        Ok(BasicBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            skip,
        })
    }

    fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, training)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, training)?;
        let s = match &self.skip {
            Some(k) => k.forward(x)?,
            None => x.clone(),
        };
        y.add(&s)?.relu()
    }

    fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.conv1.collect_params(out);
        self.bn1.collect_params(out);
        self.conv2.collect_params(out);
        self.bn2.collect_params(out);
        if let Some(k) = &self.skip {
            k.collect_params(out);
        }
    }

    fn collect_buffers(&self, out: &mut Vec<(String, Rc<RefCell<Vec<T>>>)>) {
        self.bn1.collect_buffers(out);
        self.bn2.collect_buffers(out);
    }
}

/// The encoder: a 7×7 stem with max-pooling, four stages of two basic
/// blocks, and five 1×1 projections onto the shared gate width.
pub struct Encoder<T: Scalar> {
    stem_conv: ConvLayer<T>,
    stem_bn: BnLayer<T>,
    stages: Vec<Vec<BasicBlock<T>>>,
    projections: Vec<ConvLayer<T>>,
    cfg: EncoderConfig,
}

impl<T: Scalar> Encoder<T> {
    /// Builds a fresh encoder, drawing weights from `rng` in declaration
    /// order (stem, stages, projections).
    pub fn new<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Encoder<T>> {
        cfg.validate()?;
        let momentum = T::from_f64(cfg.bn_momentum);
        let eps = T::from_f64(cfg.bn_eps);
        let [c0, ..] = cfg.widths;

        let stem_conv = ConvLayer::init("stem.conv", 3, c0, 7, 2, 3, None, rng)?;
        let stem_bn = BnLayer::init("stem.bn", c0, momentum, eps)?;

        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let (in_c, out_c) = (cfg.widths[s], cfg.widths[s + 1]);
            let stride = if s == 0 { 1 } else { 2 };
            let mut blocks = Vec::with_capacity(2);
            for b in 0..2 {
                let name = format!("stage{}.block{}", s + 1, b + 1);
                let (bi, bs) = if b == 0 { (in_c, stride) } else { (out_c, 1) };
                blocks.push(BasicBlock::init(&name, bi, out_c, bs, momentum, eps, rng)?);
            }
            stages.push(blocks);
        }

        let mut projections = Vec::with_capacity(5);
        for (j, &cj) in cfg.widths.iter().enumerate() {
            projections.push(ConvLayer::init(
                &format!("proj{j}"),
                cj,
                cfg.gate_width,
                1,
                1,
                0,
                Some(0.0),
                rng,
            )?);
        }

        Ok(Encoder {
            stem_conv,
            stem_bn,
            stages,
            projections,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Runs the encoder on `x: [N,3,H,W]` with H and W divisible by 32.
    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<FeaturePyramid<T>> {
        if x.rank() != 4 || x.shape()[1] != 3 {
            return Err(Error::shape(
                "encoder",
                format!("input must be [N,3,H,W], got {:?}", x.shape()),
            ));
        }
        let (h, w) = (x.shape()[2], x.shape()[3]);
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "encoder",
                format!("input extents {h}x{w} must be positive and divisible by 32"),
            ));
        }

        let y = self.stem_conv.forward(x)?;
        let y = self.stem_bn.forward(&y, training)?.relu()?;
        let mut cur = maxpool2d(&y, 3, 2, 1)?;

        let mut g = Vec::with_capacity(5);
        g.push(self.projections[0].forward(&cur)?);
        for (stage, proj) in self.stages.iter().zip(&self.projections[1..]) {
            for block in stage {
                cur = block.forward(&cur, training)?;
            }
            g.push(proj.forward(&cur)?);
        }
        Ok(FeaturePyramid { g })
    }

    pub(crate) fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.stem_conv.collect_params(out);
        self.stem_bn.collect_params(out);
        for stage in &self.stages {
            for block in stage {
                block.collect_params(out);
            }
        }
        for proj in &self.projections {
            proj.collect_params(out);
        }
    }

    pub(crate) fn collect_buffers(&self, out: &mut Vec<(String, Rc<RefCell<Vec<T>>>)>) {
        self.stem_bn.collect_buffers(out);
        for stage in &self.stages {
            for block in stage {
                block.collect_buffers(out);
            }
        }
    }
}
