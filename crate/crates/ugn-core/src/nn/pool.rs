//! Max pooling and nearest-neighbor upsampling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensor::{Node, Vjp, VjpCtx};

struct MaxPoolVjp {
    /// Input linear index of the winning element per output cell.
    args: Vec<usize>,
}

impl<T: Scalar> Vjp<T> for MaxPoolVjp {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let mut g = vec![T::ZERO; ctx.parents[0].numel()];
        for (o, &i) in self.args.iter().enumerate() {
            g[i] += ctx.upstream[o];
        }
        vec![Some(g)]
    }
}

/// Max pooling over `window`×`window` patches of `x: [N,C,H,W]`.
///
/// With zero padding the window tiling must cover the input exactly
/// (`(extent - window) % stride == 0`); with padding, out-of-bounds cells
/// are ignored and `padding < window` keeps every window non-empty. Ties go
/// to the first (lowest-index) maximal element.
pub fn maxpool2d<T: Scalar>(
    x: &Tensor<T>,
    window: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::shape(
            "maxpool2d",
            format!("input must be [N,C,H,W], got {:?}", x.shape()),
        ));
    }
    if window == 0 || stride == 0 {
        return Err(Error::contract(
            "maxpool2d",
            "window and stride must be positive",
        ));
    }
    if padding >= window {
        return Err(Error::contract(
            "maxpool2d",
            format!("padding {padding} must be smaller than window {window}"),
        ));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h + 2 * padding < window || w + 2 * padding < window {
        return Err(Error::shape(
            "maxpool2d",
            format!("window {window} exceeds padded extents {h}x{w}"),
        ));
    }
    if padding == 0 && ((h - window) % stride != 0 || (w - window) % stride != 0) {
        return Err(Error::shape(
            "maxpool2d",
            format!(
                "extents {h}x{w} not covered exactly by window {window} stride {stride}"
            ),
        ));
    }
    let ho = (h + 2 * padding - window) / stride + 1;
    let wo = (w + 2 * padding - window) / stride + 1;
    let d = x.data();
    let mut out = vec![T::ZERO; n * c * ho * wo];
    let mut args = vec![0usize; out.len()];
    for ni in 0..n {
        for ci in 0..c {
            let plane = (ni * c + ci) * h;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best: Option<(T, usize)> = None;
                    for ky in 0..window {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..window {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let i = (plane + iy as usize) * w + ix as usize;
                            let v = d[i];
                            match best {
                                None => best = Some((v, i)),
                                Some((bv, _)) if v > bv => best = Some((v, i)),
                                _ => {}
                            }
                        }
                    }
                    let (v, i) = best.expect("window always overlaps the input");
                    let o = ((ni * c + ci) * ho + oy) * wo + ox;
                    out[o] = v;
                    args[o] = i;
                }
            }
        }
    }
    let parents = vec![x.clone()];
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        parents.clone(),
        || Node::new(MaxPoolVjp { args }, parents),
    ))
}

struct UpsampleVjp {
    factor: usize,
}

impl<T: Scalar> Vjp<T> for UpsampleVjp {
    fn name(&self) -> &'static str {
        "upsample_nearest"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = &ctx.parents[0];
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let f = self.factor;
        let (ho, wo) = (h * f, w * f);
        let mut g = vec![T::ZERO; x.numel()];
        for ni in 0..n {
            for ci in 0..c {
                let plane_in = (ni * c + ci) * h;
                let plane_out = (ni * c + ci) * ho;
                for oy in 0..ho {
                    let row_in = (plane_in + oy / f) * w;
                    let row_out = (plane_out + oy) * wo;
                    for ox in 0..wo {
                        g[row_in + ox / f] += ctx.upstream[row_out + ox];
                    }
                }
            }
        }
        vec![Some(g)]
    }
}

/// Replicates each pixel of `x: [N,C,H,W]` into a `factor`×`factor` block;
/// factor 1 is the identity.
pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::shape(
            "upsample_nearest",
            format!("input must be [N,C,H,W], got {:?}", x.shape()),
        ));
    }
    if factor == 0 {
        return Err(Error::contract("upsample_nearest", "factor must be positive"));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h * factor, w * factor);
    let d = x.data();
    let mut out = vec![T::ZERO; n * c * ho * wo];
    for ni in 0..n {
        for ci in 0..c {
            let plane_in = (ni * c + ci) * h;
            let plane_out = (ni * c + ci) * ho;
            for oy in 0..ho {
                let row_in = (plane_in + oy / factor) * w;
                let row_out = (plane_out + oy) * wo;
                for ox in 0..wo {
                    out[row_out + ox] = d[row_in + ox / factor];
                }
            }
        }
    }
    let parents = vec![x.clone()];
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        parents.clone(),
        || Node::new(UpsampleVjp { factor }, parents),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_window_takes_max() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = maxpool2d(&x, 2, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn odd_extents_without_padding_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 4]).unwrap();
        assert!(matches!(
            maxpool2d(&x, 2, 2, 0),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn constant_input_routes_gradient_to_first_cell() {
        let x = Tensor::<f64>::leaf(&[1, 1, 2, 2], vec![7.0; 4]).unwrap();
        let y = maxpool2d(&x, 2, 2, 0).unwrap();
        assert_eq!(y.data(), &[7.0]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn padded_three_by_three_matches_stem_geometry() {
        // 32x32 -> 16x16 under window 3, stride 2, padding 1.
        let x = Tensor::<f64>::zeros(&[1, 1, 32, 32]).unwrap();
        let y = maxpool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 16, 16]);
    }

    #[test]
    fn matches_window_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let h = 2 * rng.random_range(1..=3);
            let w = 2 * rng.random_range(1..=3);
            let x: Vec<f64> = (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xt = Tensor::from_vec(&[1, 2, h, w], x.clone()).unwrap();
            let y = maxpool2d(&xt, 2, 2, 0).unwrap();
            for ci in 0..2 {
                for oy in 0..h / 2 {
                    for ox in 0..w / 2 {
                        let mut m = f64::NEG_INFINITY;
                        for ky in 0..2 {
                            for kx in 0..2 {
                                m = m.max(x[(ci * h + 2 * oy + ky) * w + 2 * ox + kx]);
                            }
                        }
                        assert_eq!(y.at(&[0, ci, oy, ox]), m);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_gradient_checks_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::leaf(
            &[1, 2, 4, 4],
            (0..32).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let err = gradient_check(|t| maxpool2d(t, 2, 2, 0), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "maxpool rel error {err}");
        let err = gradient_check(|t| maxpool2d(t, 3, 2, 1), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "padded maxpool rel error {err}");
    }

    #[test]
    fn upsample_replicates_and_composes() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0; 4]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Tensor::<f64>::randn(&[2, 2, 3, 2], &mut rng).unwrap();
        let ab = upsample_nearest(&upsample_nearest(&z, 2).unwrap(), 3).unwrap();
        let once = upsample_nearest(&z, 6).unwrap();
        assert_eq!(ab.shape(), once.shape());
        assert_eq!(ab.data(), once.data());

        let ident = upsample_nearest(&z, 1).unwrap();
        assert_eq!(ident.data(), z.data());
    }

    #[test]
    fn upsample_gradient_counts_replicas() {
        let x = Tensor::<f64>::leaf(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_nearest(&x, 3).unwrap();
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![9.0; 4]);
    }
}
