//! Direct 2-D convolution (cross-correlation semantics).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensor::{Node, Vjp, VjpCtx};

/// Kernel, optional bias, and geometry of one convolution.
pub struct Conv2dParams<T: Scalar> {
    /// `[outC, inC, kH, kW]`.
    pub kernel: Tensor<T>,
    /// `[outC]`, added per output channel.
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    /// Symmetric zero padding.
    pub padding: usize,
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

fn geometry<T: Scalar>(x: &Tensor<T>, p: &Conv2dParams<T>) -> Result<Geometry> {
    if x.rank() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("input must be [N,C,H,W], got {:?}", x.shape()),
        ));
    }
    if p.kernel.rank() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be [O,C,kH,kW], got {:?}", p.kernel.shape()),
        ));
    }
    if p.stride == 0 {
        return Err(Error::contract("conv2d", "stride must be positive"));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let ks = p.kernel.shape();
    let (oc, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if kc != c {
        return Err(Error::shape(
            "conv2d",
            format!("kernel expects {kc} input channels, input has {c}"),
        ));
    }
    if let Some(b) = &p.bias {
        if b.shape() != [oc] {
            return Err(Error::shape(
                "conv2d",
                format!("bias must be [{oc}], got {:?}", b.shape()),
            ));
        }
    }
    let span_h = h + 2 * p.padding;
    let span_w = w + 2 * p.padding;
    if span_h < kh || span_w < kw {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} exceeds padded input {span_h}x{span_w}"),
        ));
    }
    Ok(Geometry {
        n,
        c,
        h,
        w,
        oc,
        kh,
        kw,
        ho: (span_h - kh) / p.stride + 1,
        wo: (span_w - kw) / p.stride + 1,
        stride: p.stride,
        padding: p.padding,
    })
}

struct Conv2dVjp {
    stride: usize,
    padding: usize,
}

impl<T: Scalar> Vjp<T> for Conv2dVjp {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = &ctx.parents[0];
        let k = &ctx.parents[1];
        let has_bias = ctx.parents.len() == 3;
        let g = geometry(
            x,
            &Conv2dParams {
                kernel: k.clone(),
                bias: has_bias.then(|| ctx.parents[2].clone()),
                stride: self.stride,
                padding: self.padding,
            },
        )
        .expect("geometry validated in forward");
        let xd = x.data();
        let kd = k.data();
        let up = ctx.upstream;

        let mut gx = ctx.needs[0].then(|| vec![T::ZERO; x.numel()]);
        let mut gk = ctx.needs[1].then(|| vec![T::ZERO; k.numel()]);
        let mut gb = (has_bias && ctx.needs[2]).then(|| vec![T::ZERO; g.oc]);

        for ni in 0..g.n {
            for o in 0..g.oc {
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let u = up[((ni * g.oc + o) * g.ho + oy) * g.wo + ox];
                        if let Some(b) = gb.as_mut() {
                            b[o] += u;
                        }
                        for ci in 0..g.c {
                            for ky in 0..g.kh {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                if iy < 0 || iy as usize >= g.h {
                                    continue;
                                }
                                for kx in 0..g.kw {
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if ix < 0 || ix as usize >= g.w {
                                        continue;
                                    }
                                    let xi = ((ni * g.c + ci) * g.h + iy as usize) * g.w
                                        + ix as usize;
                                    let ki = ((o * g.c + ci) * g.kh + ky) * g.kw + kx;
                                    if let Some(gxv) = gx.as_mut() {
                                        gxv[xi] += u * kd[ki];
                                    }
                                    if let Some(gkv) = gk.as_mut() {
                                        gkv[ki] += u * xd[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![gx, gk];
        if has_bias {
            out.push(gb);
        }
        out
    }
}

/// 2-D convolution of `x: [N,C,H,W]` with floor output sizing
/// `out = (in + 2*padding - k) / stride + 1`. Gradients flow to the input,
/// the kernel, and the bias.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &Conv2dParams<T>) -> Result<Tensor<T>> {
    let g = geometry(x, p)?;
    let xd = x.data();
    let kd = p.kernel.data();
    let bd = p.bias.as_ref().map(|b| b.data());
    let mut out = vec![T::ZERO; g.n * g.oc * g.ho * g.wo];

    for ni in 0..g.n {
        for o in 0..g.oc {
            let b0 = bd.map_or(T::ZERO, |b| b[o]);
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = b0;
                    for ci in 0..g.c {
                        let xbase = (ni * g.c + ci) * g.h;
                        let kbase = (o * g.c + ci) * g.kh;
                        for ky in 0..g.kh {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            if iy < 0 || iy as usize >= g.h {
                                continue;
                            }
                            let xrow = (xbase + iy as usize) * g.w;
                            let krow = (kbase + ky) * g.kw;
                            for kx in 0..g.kw {
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if ix < 0 || ix as usize >= g.w {
                                    continue;
                                }
                                acc += xd[xrow + ix as usize] * kd[krow + kx];
                            }
                        }
                    }
                    out[((ni * g.oc + o) * g.ho + oy) * g.wo + ox] = acc;
                }
            }
        }
    }

    let mut parents = vec![x.clone(), p.kernel.clone()];
    if let Some(b) = &p.bias {
        parents.push(b.clone());
    }
    let (stride, padding) = (p.stride, p.padding);
    Ok(Tensor::from_op(
        vec![g.n, g.oc, g.ho, g.wo],
        out,
        parents.clone(),
        || Node::new(Conv2dVjp { stride, padding }, parents),
    ))
}
