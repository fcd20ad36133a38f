//! Batch normalization over `[N,C,H,W]` with per-channel affine terms.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensor::{Node, Vjp, VjpCtx};
use std::cell::RefCell;
use std::rc::Rc;

/// Learnable affine terms plus running statistics of one normalization.
///
/// The running statistics are interior-mutable so a training forward pass
/// can update them while the surrounding graph stays immutable, and shared
/// behind `Rc` so a layer can rebuild this state around fresh parameter
/// tensors after an optimizer step without losing the accumulated moments.
pub struct BatchNormState<T: Scalar> {
    /// `[C]` multiplicative term.
    pub scale: Tensor<T>,
    /// `[C]` additive term.
    pub shift: Tensor<T>,
    pub running_mean: Rc<RefCell<Vec<T>>>,
    pub running_var: Rc<RefCell<Vec<T>>>,
    /// Fraction of the old running value kept per update, in (0,1).
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormState<T> {
    /// Fresh state: scale 1, shift 0, running mean 0, running variance 1.
    pub fn new(channels: usize, momentum: T, eps: T) -> Result<BatchNormState<T>> {
        if channels == 0 {
            return Err(Error::contract("batchnorm2d", "channels must be positive"));
        }
        let m = momentum.to_f64();
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::contract(
                "batchnorm2d",
                format!("momentum must be in (0,1), got {momentum}"),
            ));
        }
        if !(eps.to_f64() > 0.0) {
            return Err(Error::contract(
                "batchnorm2d",
                format!("epsilon must be positive, got {eps}"),
            ));
        }
        Ok(BatchNormState {
            scale: Tensor::leaf(&[channels], vec![T::ONE; channels])?,
            shift: Tensor::leaf(&[channels], vec![T::ZERO; channels])?,
            running_mean: Rc::new(RefCell::new(vec![T::ZERO; channels])),
            running_var: Rc::new(RefCell::new(vec![T::ONE; channels])),
            momentum,
            eps,
        })
    }

    /// Assemble a state around existing parameter tensors and shared
    /// statistics buffers (all `[C]`, validated against each other).
    pub fn from_parts(
        scale: Tensor<T>,
        shift: Tensor<T>,
        running_mean: Rc<RefCell<Vec<T>>>,
        running_var: Rc<RefCell<Vec<T>>>,
        momentum: T,
        eps: T,
    ) -> Result<BatchNormState<T>> {
        let c = scale.numel();
        if scale.rank() != 1
            || shift.shape() != [c]
            || running_mean.borrow().len() != c
            || running_var.borrow().len() != c
        {
            return Err(Error::shape(
                "batchnorm2d",
                "scale, shift and running statistics must all be [C]",
            ));
        }
        let template = BatchNormState::new(c, momentum, eps)?;
        Ok(BatchNormState {
            scale,
            shift,
            running_mean,
            running_var,
            ..template
        })
    }

    pub fn channels(&self) -> usize {
        self.scale.numel()
    }
}

/// Shared backward math: given normalized activations and the per-channel
/// inverse std, produce dx / dscale / dshift. `batch_stats` selects the
/// training-mode correction terms that account for the statistics'
/// dependence on x.
struct BatchNormVjp<T: Scalar> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl<T: Scalar> Vjp<T> for BatchNormVjp<T> {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = &ctx.parents[0];
        let scale = ctx.parents[1].data();
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let plane = h * w;
        let m = T::from_usize(n * plane);
        let up = ctx.upstream;

        // Per-channel sums of upstream and upstream*xhat (used by all three
        // gradients).
        let mut sum_u = vec![T::ZERO; c];
        let mut sum_ux = vec![T::ZERO; c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                for i in 0..plane {
                    let u = up[base + i];
                    sum_u[ci] += u;
                    sum_ux[ci] += u * self.xhat[base + i];
                }
            }
        }

        let gx = ctx.needs[0].then(|| {
            let mut g = vec![T::ZERO; x.numel()];
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    let k = scale[ci] * self.inv_std[ci];
                    for i in 0..plane {
                        let u = up[base + i];
                        g[base + i] = if self.batch_stats {
                            k * (u - sum_u[ci] / m - self.xhat[base + i] * sum_ux[ci] / m)
                        } else {
                            k * u
                        };
                    }
                }
            }
            g
        });
        let gscale = ctx.needs[1].then(|| sum_ux.clone());
        let gshift = ctx.needs[2].then(|| sum_u.clone());
        vec![gx, gscale, gshift]
    }
}

/// Batch normalization of `x: [N,C,H,W]`.
///
/// Training mode normalizes by the batch mean and biased variance over
/// (N,H,W) and folds them into the running statistics
/// (`new = momentum*old + (1-momentum)*batch`); eval mode normalizes by the
/// stored running statistics and leaves them untouched.
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor<T>,
    st: &BatchNormState<T>,
    training: bool,
) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::shape(
            "batchnorm2d",
            format!("input must be [N,C,H,W], got {:?}", x.shape()),
        ));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if c != st.channels() {
        return Err(Error::shape(
            "batchnorm2d",
            format!("state has {} channels, input has {c}", st.channels()),
        ));
    }
    let plane = h * w;
    let m = T::from_usize(n * plane);
    let d = x.data();

    let (mean, var): (Vec<T>, Vec<T>) = if training {
        let mut mean = vec![T::ZERO; c];
        let mut var = vec![T::ZERO; c];
        for ci in 0..c {
            let mut s = T::ZERO;
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for i in 0..plane {
                    s += d[base + i];
                }
            }
            mean[ci] = s / m;
            let mut v = T::ZERO;
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for i in 0..plane {
                    let dvi = d[base + i] - mean[ci];
                    v += dvi * dvi;
                }
            }
            var[ci] = v / m;
        }
        {
            let mut rm = st.running_mean.borrow_mut();
            let mut rv = st.running_var.borrow_mut();
            let keep = st.momentum;
            let take = T::ONE - st.momentum;
            for ci in 0..c {
                rm[ci] = keep * rm[ci] + take * mean[ci];
                rv[ci] = keep * rv[ci] + take * var[ci];
            }
        }
        (mean, var)
    } else {
        (
            st.running_mean.borrow().clone(),
            st.running_var.borrow().clone(),
        )
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + st.eps).sqrt()).collect();
    let scale = st.scale.data();
    let shift = st.shift.data();
    let mut xhat = vec![T::ZERO; x.numel()];
    let mut out = vec![T::ZERO; x.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                let xh = (d[base + i] - mean[ci]) * inv_std[ci];
                xhat[base + i] = xh;
                out[base + i] = scale[ci] * xh + shift[ci];
            }
        }
    }

    let parents = vec![x.clone(), st.scale.clone(), st.shift.clone()];
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        parents.clone(),
        || {
            Node::new(
                BatchNormVjp {
                    xhat,
                    inv_std,
                    batch_stats: training,
                },
                parents,
            )
        },
    ))
}
