//! Primitive differentiable ops on [`Tensor`].
//!
//! Binary arithmetic supports one broadcasting pattern: equal shapes, or
//! equal ranks (>= 2) that differ only at axis 1 where one side has extent
//! 1. That is exactly the channel-singleton case needed to apply per-pixel
//! gate maps and per-channel affine terms; anything else is a shape error.

use super::autograd::{Node, Vjp, VjpCtx};
use super::{numel_of, strides_of, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

// ---------------------------------------------------------------------------
// shape utilities
// ---------------------------------------------------------------------------

enum Bcast {
    Same,
    Axis1,
}

fn resolve_bcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Bcast)> {
    if a == b {
        return Ok((a.to_vec(), Bcast::Same));
    }
    let compatible = a.len() == b.len()
        && a.len() >= 2
        && a.iter()
            .zip(b)
            .enumerate()
            .all(|(ax, (&ea, &eb))| ea == eb || (ax == 1 && (ea == 1 || eb == 1)));
    if !compatible {
        return Err(Error::shape(
            op,
            format!("incompatible shapes {a:?} and {b:?} (only axis-1 singletons broadcast)"),
        ));
    }
    let mut out = a.to_vec();
    out[1] = a[1].max(b[1]);
    Ok((out, Bcast::Axis1))
}

/// Calls `f(out_idx, a_idx, b_idx)` for every output element of a binary op.
fn zip_bcast<F: FnMut(usize, usize, usize)>(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    bcast: &Bcast,
    mut f: F,
) {
    match bcast {
        Bcast::Same => {
            for i in 0..numel_of(out_shape) {
                f(i, i, i);
            }
        }
        Bcast::Axis1 => {
            let outer = out_shape[0];
            let c = out_shape[1];
            let ca = a_shape[1];
            let cb = b_shape[1];
            let inner: usize = out_shape[2..].iter().product();
            for o in 0..outer {
                for m in 0..c {
                    let oi = (o * c + m) * inner;
                    let ai = (o * ca + m.min(ca - 1)) * inner;
                    let bi = (o * cb + m.min(cb - 1)) * inner;
                    for i in 0..inner {
                        f(oi + i, ai + i, bi + i);
                    }
                }
            }
        }
    }
}

/// Per-axis output stride for a reduction (0 on reduced axes), plus the
/// number of output elements. The linear mapping ignores `keepdim` because
/// extent-1 axes do not contribute to a row-major offset.
fn reduce_layout(in_shape: &[usize], reduced: &[bool]) -> (Vec<usize>, usize) {
    let kept: Vec<usize> = in_shape
        .iter()
        .zip(reduced)
        .map(|(&e, &r)| if r { 1 } else { e })
        .collect();
    let kept_strides = strides_of(&kept);
    let out_numel = numel_of(&kept);
    let per_axis = reduced
        .iter()
        .enumerate()
        .map(|(ax, &r)| if r { 0 } else { kept_strides[ax] })
        .collect();
    (per_axis, out_numel)
}

fn reduce_out_shape(in_shape: &[usize], reduced: &[bool], keepdim: bool) -> Vec<usize> {
    in_shape
        .iter()
        .zip(reduced)
        .filter_map(|(&e, &r)| match (r, keepdim) {
            (true, true) => Some(1),
            (true, false) => None,
            (false, _) => Some(e),
        })
        .collect()
}

fn reduced_mask(op: &'static str, rank: usize, axes: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; rank];
    for &ax in axes {
        if ax >= rank {
            return Err(Error::shape(
                op,
                format!("axis {ax} out of range for rank {rank}"),
            ));
        }
        if mask[ax] {
            return Err(Error::contract(op, format!("duplicate axis {ax}")));
        }
        mask[ax] = true;
    }
    Ok(mask)
}

/// Decomposition of a shape around one axis: lanes are indexed by
/// `(q, r)` with `q < outer`, `r < inner`; element `k` of a lane sits at
/// `(q * extent + k) * inner + r` and the lane's own row-major index is
/// `q * inner + r`.
struct LaneLayout {
    outer: usize,
    extent: usize,
    inner: usize,
}

impl LaneLayout {
    fn new(op: &'static str, shape: &[usize], axis: usize) -> Result<LaneLayout> {
        if axis >= shape.len() {
            return Err(Error::shape(
                op,
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        Ok(LaneLayout {
            outer: shape[..axis].iter().product(),
            extent: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    fn lanes(&self) -> usize {
        self.outer * self.inner
    }

    fn elem(&self, lane: usize, k: usize) -> usize {
        let q = lane / self.inner;
        let r = lane % self.inner;
        (q * self.extent + k) * self.inner + r
    }
}

// ---------------------------------------------------------------------------
// binary arithmetic
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinKind {
    fn name(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }
}

struct BinVjp {
    kind: BinKind,
}

impl<T: Scalar> Vjp<T> for BinVjp {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let a = &ctx.parents[0];
        let b = &ctx.parents[1];
        let (_, bcast) = resolve_bcast(self.kind.name(), a.shape(), b.shape())
            .expect("shapes validated in forward");
        let mut ga = ctx.needs[0].then(|| vec![T::ZERO; a.numel()]);
        let mut gb = ctx.needs[1].then(|| vec![T::ZERO; b.numel()]);
        let (ad, bd) = (a.data(), b.data());
        zip_bcast(ctx.out_shape, a.shape(), b.shape(), &bcast, |oi, ai, bi| {
            let u = ctx.upstream[oi];
            match self.kind {
                BinKind::Add => {
                    if let Some(g) = ga.as_mut() {
                        g[ai] += u;
                    }
                    if let Some(g) = gb.as_mut() {
                        g[bi] += u;
                    }
                }
                BinKind::Sub => {
                    if let Some(g) = ga.as_mut() {
                        g[ai] += u;
                    }
                    if let Some(g) = gb.as_mut() {
                        g[bi] -= u;
                    }
                }
                BinKind::Mul => {
                    if let Some(g) = ga.as_mut() {
                        g[ai] += u * bd[bi];
                    }
                    if let Some(g) = gb.as_mut() {
                        g[bi] += u * ad[ai];
                    }
                }
                BinKind::Div => {
                    if let Some(g) = ga.as_mut() {
                        g[ai] += u / bd[bi];
                    }
                    if let Some(g) = gb.as_mut() {
                        g[bi] -= u * ctx.out_data[oi] / bd[bi];
                    }
                }
            }
        });
        vec![ga, gb]
    }
}

impl<T: Scalar> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: BinKind) -> Result<Tensor<T>> {
        let (out_shape, bcast) = resolve_bcast(kind.name(), self.shape(), other.shape())?;
        if matches!(kind, BinKind::Div) {
            if let Some(pos) = other.data().iter().position(|&v| v == T::ZERO) {
                return Err(Error::domain(
                    "div",
                    format!("divisor element {pos} is zero"),
                ));
            }
        }
        let mut out = vec![T::ZERO; numel_of(&out_shape)];
        let (ad, bd) = (self.data(), other.data());
        zip_bcast(&out_shape, self.shape(), other.shape(), &bcast, |oi, ai, bi| {
            out[oi] = match kind {
                BinKind::Add => ad[ai] + bd[bi],
                BinKind::Sub => ad[ai] - bd[bi],
                BinKind::Mul => ad[ai] * bd[bi],
                BinKind::Div => ad[ai] / bd[bi],
            };
        });
        let parents = vec![self.clone(), other.clone()];
        Ok(Tensor::from_op(out_shape, out, parents.clone(), || {
            Node::new(BinVjp { kind }, parents)
        }))
    }

    /// Elementwise sum, with axis-1 singleton broadcasting.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinKind::Add)
    }

    /// Elementwise difference, with axis-1 singleton broadcasting.
    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinKind::Sub)
    }

    /// Elementwise product, with axis-1 singleton broadcasting.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinKind::Mul)
    }

    /// Elementwise quotient; any zero in the divisor is a domain error.
    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinKind::Div)
    }
}

// ---------------------------------------------------------------------------
// unary ops
// ---------------------------------------------------------------------------

struct AffineVjp<T: Scalar> {
    a: T,
}

impl<T: Scalar> Vjp<T> for AffineVjp<T> {
    fn name(&self) -> &'static str {
        "affine"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(ctx.upstream.iter().map(|&u| u * self.a).collect())]
    }
}

struct ExpVjp;

impl<T: Scalar> Vjp<T> for ExpVjp {
    fn name(&self) -> &'static str {
        "exp"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let g = ctx
            .upstream
            .iter()
            .zip(ctx.out_data)
            .map(|(&u, &y)| u * y)
            .collect();
        vec![Some(g)]
    }
}

struct LnVjp;

impl<T: Scalar> Vjp<T> for LnVjp {
    fn name(&self) -> &'static str {
        "ln"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = ctx.parents[0].data();
        let g = ctx
            .upstream
            .iter()
            .zip(x)
            .map(|(&u, &v)| u / v)
            .collect();
        vec![Some(g)]
    }
}

struct ReluVjp;

impl<T: Scalar> Vjp<T> for ReluVjp {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = ctx.parents[0].data();
        let g = ctx
            .upstream
            .iter()
            .zip(x)
            .map(|(&u, &v)| if v > T::ZERO { u } else { T::ZERO })
            .collect();
        vec![Some(g)]
    }
}

impl<T: Scalar> Tensor<T> {
    fn unary(
        &self,
        out: Vec<T>,
        op: impl Vjp<T> + 'static,
    ) -> Tensor<T> {
        let parents = vec![self.clone()];
        Tensor::from_op(self.shape().to_vec(), out, parents.clone(), || {
            Node::new(op, parents)
        })
    }

    /// `a * x + b` elementwise with scalar coefficients.
    pub fn affine(&self, a: T, b: T) -> Result<Tensor<T>> {
        let out = self.data().iter().map(|&v| a * v + b).collect();
        Ok(self.unary(out, AffineVjp { a }))
    }

    /// Elementwise negation.
    pub fn neg(&self) -> Result<Tensor<T>> {
        self.affine(-T::ONE, T::ZERO)
    }

    /// Elementwise exponential.
    pub fn exp(&self) -> Result<Tensor<T>> {
        let out = self.data().iter().map(|&v| v.exp()).collect();
        Ok(self.unary(out, ExpVjp))
    }

    /// Elementwise natural log; non-positive elements are a domain error.
    pub fn ln(&self) -> Result<Tensor<T>> {
        if let Some(pos) = self.data().iter().position(|&v| v <= T::ZERO) {
            return Err(Error::domain(
                "ln",
                format!(
                    "element {pos} is {} (must be positive)",
                    self.data()[pos]
                ),
            ));
        }
        let out = self.data().iter().map(|&v| v.ln()).collect();
        Ok(self.unary(out, LnVjp))
    }

    /// Elementwise `max(x, 0)`; the subgradient at exactly zero is zero.
    pub fn relu(&self) -> Result<Tensor<T>> {
        let out = self
            .data()
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect();
        Ok(self.unary(out, ReluVjp))
    }
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

struct SumVjp {
    reduced: Vec<bool>,
    scale_recip: Option<usize>,
}

impl<T: Scalar> Vjp<T> for SumVjp {
    fn name(&self) -> &'static str {
        if self.scale_recip.is_some() {
            "mean"
        } else {
            "sum"
        }
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = &ctx.parents[0];
        let in_strides = strides_of(x.shape());
        let (per_axis, _) = reduce_layout(x.shape(), &self.reduced);
        let scale = match self.scale_recip {
            Some(n) => T::ONE / T::from_usize(n),
            None => T::ONE,
        };
        let mut g = vec![T::ZERO; x.numel()];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut rem = i;
            let mut o = 0usize;
            for ax in 0..x.rank() {
                let c = rem / in_strides[ax];
                rem %= in_strides[ax];
                o += c * per_axis[ax];
            }
            *gi = ctx.upstream[o] * scale;
        }
        vec![Some(g)]
    }
}

struct MaxAllVjp {
    arg: usize,
}

impl<T: Scalar> Vjp<T> for MaxAllVjp {
    fn name(&self) -> &'static str {
        "max_all"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let mut g = vec![T::ZERO; ctx.parents[0].numel()];
        g[self.arg] = ctx.upstream[0];
        vec![Some(g)]
    }
}

struct MaxAxisVjp {
    axis: usize,
    args: Vec<usize>,
}

impl<T: Scalar> Vjp<T> for MaxAxisVjp {
    fn name(&self) -> &'static str {
        "max_axis"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = &ctx.parents[0];
        let ll = LaneLayout::new("max_axis", x.shape(), self.axis).expect("validated");
        let mut g = vec![T::ZERO; x.numel()];
        for (lane, &k) in self.args.iter().enumerate() {
            g[ll.elem(lane, k)] = ctx.upstream[lane];
        }
        vec![Some(g)]
    }
}

impl<T: Scalar> Tensor<T> {
    fn sum_impl(
        &self,
        op: &'static str,
        axes: &[usize],
        keepdim: bool,
        mean: bool,
    ) -> Result<Tensor<T>> {
        let reduced = reduced_mask(op, self.rank(), axes)?;
        if axes.is_empty() {
            return Err(Error::contract(op, "no axes given"));
        }
        let out_shape = reduce_out_shape(self.shape(), &reduced, keepdim);
        let in_strides = strides_of(self.shape());
        let (per_axis, out_numel) = reduce_layout(self.shape(), &reduced);
        let mut out = vec![T::ZERO; out_numel];
        for (i, &v) in self.data().iter().enumerate() {
            let mut rem = i;
            let mut o = 0usize;
            for ax in 0..self.rank() {
                let c = rem / in_strides[ax];
                rem %= in_strides[ax];
                o += c * per_axis[ax];
            }
            out[o] += v;
        }
        let red_count = self.numel() / out_numel;
        if mean {
            let inv = T::ONE / T::from_usize(red_count);
            for v in &mut out {
                *v *= inv;
            }
        }
        let parents = vec![self.clone()];
        Ok(Tensor::from_op(out_shape, out, parents.clone(), || {
            Node::new(
                SumVjp {
                    reduced,
                    scale_recip: mean.then_some(red_count),
                },
                parents,
            )
        }))
    }

    /// Sum over the given axes; `keepdim` keeps them as extent 1.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        self.sum_impl("sum", axes, keepdim, false)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        if axes.is_empty() {
            // Rank-0 input: summing is the identity.
            return self.affine(T::ONE, T::ZERO);
        }
        self.sum_impl("sum", &axes, false, false)
    }

    /// Mean over the given axes.
    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        self.sum_impl("mean", axes, keepdim, true)
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        if axes.is_empty() {
            return self.affine(T::ONE, T::ZERO);
        }
        self.sum_impl("mean", &axes, false, true)
    }

    /// Maximum element, as a rank-0 tensor; ties go to the first position.
    pub fn max_all(&self) -> Result<Tensor<T>> {
        let mut arg = 0usize;
        let mut best = self.data()[0];
        for (i, &v) in self.data().iter().enumerate().skip(1) {
            if v > best {
                best = v;
                arg = i;
            }
        }
        let parents = vec![self.clone()];
        Ok(Tensor::from_op(Vec::new(), vec![best], parents.clone(), || {
            Node::new(MaxAllVjp { arg }, parents)
        }))
    }

    /// Maximum along one axis; ties go to the lowest index on that axis.
    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        let ll = LaneLayout::new("max_axis", self.shape(), axis)?;
        let reduced = {
            let mut m = vec![false; self.rank()];
            m[axis] = true;
            m
        };
        let out_shape = reduce_out_shape(self.shape(), &reduced, keepdim);
        let x = self.data();
        let mut out = vec![T::ZERO; ll.lanes()];
        let mut args = vec![0usize; ll.lanes()];
        for lane in 0..ll.lanes() {
            let mut best = x[ll.elem(lane, 0)];
            let mut arg = 0usize;
            for k in 1..ll.extent {
                let v = x[ll.elem(lane, k)];
                if v > best {
                    best = v;
                    arg = k;
                }
            }
            out[lane] = best;
            args[lane] = arg;
        }
        let parents = vec![self.clone()];
        Ok(Tensor::from_op(out_shape, out, parents.clone(), || {
            Node::new(MaxAxisVjp { axis, args }, parents)
        }))
    }
}

/// Per-lane index of the maximum along `axis` (ties to the lowest index),
/// in the row-major order of the reduced shape. Not differentiable.
pub fn argmax_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Vec<usize>> {
    let ll = LaneLayout::new("argmax_axis", x.shape(), axis)?;
    let d = x.data();
    let mut args = vec![0usize; ll.lanes()];
    for (lane, arg) in args.iter_mut().enumerate() {
        let mut best = d[ll.elem(lane, 0)];
        for k in 1..ll.extent {
            let v = d[ll.elem(lane, k)];
            if v > best {
                best = v;
                *arg = k;
            }
        }
    }
    Ok(args)
}

// ---------------------------------------------------------------------------
// logsumexp / softmax
// ---------------------------------------------------------------------------

struct LseVjp {
    axis: usize,
}

impl<T: Scalar> Vjp<T> for LseVjp {
    fn name(&self) -> &'static str {
        "logsumexp"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = &ctx.parents[0];
        let ll = LaneLayout::new("logsumexp", x.shape(), self.axis).expect("validated");
        let d = x.data();
        let mut g = vec![T::ZERO; x.numel()];
        for lane in 0..ll.lanes() {
            let o = ctx.out_data[lane];
            let u = ctx.upstream[lane];
            for k in 0..ll.extent {
                let i = ll.elem(lane, k);
                g[i] = (d[i] - o).exp() * u;
            }
        }
        vec![Some(g)]
    }
}

struct SoftmaxVjp {
    axis: usize,
}

impl<T: Scalar> Vjp<T> for SoftmaxVjp {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        // Pairwise antisymmetric form: dx_k = sum_c p_k p_c (u_k - u_c).
        // Each term vanishes identically when the upstream is constant over
        // the lane, so such lanes produce bitwise-zero gradients instead of
        // rounding residue from the usual p_k (u_k - sum_c p_c u_c) form.
        let x = &ctx.parents[0];
        let ll = LaneLayout::new("softmax", x.shape(), self.axis).expect("validated");
        let p = ctx.out_data;
        let u = ctx.upstream;
        let mut g = vec![T::ZERO; x.numel()];
        for lane in 0..ll.lanes() {
            for k in 0..ll.extent {
                let ik = ll.elem(lane, k);
                let mut acc = T::ZERO;
                for c in 0..ll.extent {
                    let ic = ll.elem(lane, c);
                    acc += p[ik] * p[ic] * (u[ik] - u[ic]);
                }
                g[ik] = acc;
            }
        }
        vec![Some(g)]
    }
}

impl<T: Scalar> Tensor<T> {
    /// `log(sum(exp(x)))` along one axis, computed with the max-shift trick.
    pub fn logsumexp(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        let ll = LaneLayout::new("logsumexp", self.shape(), axis)?;
        let reduced = {
            let mut m = vec![false; self.rank()];
            m[axis] = true;
            m
        };
        let out_shape = reduce_out_shape(self.shape(), &reduced, keepdim);
        let d = self.data();
        let mut out = vec![T::ZERO; ll.lanes()];
        for (lane, slot) in out.iter_mut().enumerate() {
            let mut m = d[ll.elem(lane, 0)];
            for k in 1..ll.extent {
                m = m.max_s(d[ll.elem(lane, k)]);
            }
            let mut s = T::ZERO;
            for k in 0..ll.extent {
                s += (d[ll.elem(lane, k)] - m).exp();
            }
            *slot = m + s.ln();
        }
        let parents = vec![self.clone()];
        Ok(Tensor::from_op(out_shape, out, parents.clone(), || {
            Node::new(LseVjp { axis }, parents)
        }))
    }

    /// Softmax along one axis (`exp(x - logsumexp(x))`).
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let ll = LaneLayout::new("softmax", self.shape(), axis)?;
        let d = self.data();
        let mut out = vec![T::ZERO; self.numel()];
        for lane in 0..ll.lanes() {
            let mut m = d[ll.elem(lane, 0)];
            for k in 1..ll.extent {
                m = m.max_s(d[ll.elem(lane, k)]);
            }
            let mut s = T::ZERO;
            for k in 0..ll.extent {
                s += (d[ll.elem(lane, k)] - m).exp();
            }
            for k in 0..ll.extent {
                let i = ll.elem(lane, k);
                out[i] = (d[i] - m).exp() / s;
            }
        }
        let parents = vec![self.clone()];
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            parents.clone(),
            || Node::new(SoftmaxVjp { axis }, parents),
        ))
    }
}

// ---------------------------------------------------------------------------
// gather / tile
// ---------------------------------------------------------------------------

struct GatherAxisVjp {
    axis: usize,
    idx: Vec<usize>,
}

impl<T: Scalar> Vjp<T> for GatherAxisVjp {
    fn name(&self) -> &'static str {
        "gather_axis"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = &ctx.parents[0];
        let ll = LaneLayout::new("gather_axis", x.shape(), self.axis).expect("validated");
        let mut g = vec![T::ZERO; x.numel()];
        for (lane, &k) in self.idx.iter().enumerate() {
            g[ll.elem(lane, k)] += ctx.upstream[lane];
        }
        vec![Some(g)]
    }
}

struct Tile0Vjp {
    reps: usize,
}

impl<T: Scalar> Vjp<T> for Tile0Vjp {
    fn name(&self) -> &'static str {
        "tile0"
    }
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let n = ctx.parents[0].numel();
        let mut g = vec![T::ZERO; n];
        for r in 0..self.reps {
            let chunk = &ctx.upstream[r * n..(r + 1) * n];
            for (gi, &u) in g.iter_mut().zip(chunk) {
                *gi += u;
            }
        }
        vec![Some(g)]
    }
}

impl<T: Scalar> Tensor<T> {
    /// Picks one element along `axis` per lane, keeping the axis as extent 1.
    ///
    /// `idx` holds one in-range index per lane, laid out in the row-major
    /// order of the shape with `axis` dropped.
    pub fn gather_axis(&self, axis: usize, idx: &[usize]) -> Result<Tensor<T>> {
        let ll = LaneLayout::new("gather_axis", self.shape(), axis)?;
        if idx.len() != ll.lanes() {
            return Err(Error::shape(
                "gather_axis",
                format!("need {} indices, got {}", ll.lanes(), idx.len()),
            ));
        }
        if let Some(pos) = idx.iter().position(|&k| k >= ll.extent) {
            return Err(Error::contract(
                "gather_axis",
                format!(
                    "index {} at lane {pos} exceeds axis extent {}",
                    idx[pos], ll.extent
                ),
            ));
        }
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = 1;
        let d = self.data();
        let out = idx
            .iter()
            .enumerate()
            .map(|(lane, &k)| d[ll.elem(lane, k)])
            .collect();
        let parents = vec![self.clone()];
        let idx = idx.to_vec();
        Ok(Tensor::from_op(out_shape, out, parents.clone(), || {
            Node::new(GatherAxisVjp { axis, idx }, parents)
        }))
    }

    /// Stacks `reps` copies along a new leading axis.
    pub fn tile0(&self, reps: usize) -> Result<Tensor<T>> {
        if reps == 0 {
            return Err(Error::contract("tile0", "reps must be positive"));
        }
        let mut out_shape = Vec::with_capacity(self.rank() + 1);
        out_shape.push(reps);
        out_shape.extend_from_slice(self.shape());
        let n = self.numel();
        let mut out = Vec::with_capacity(n * reps);
        for _ in 0..reps {
            out.extend_from_slice(self.data());
        }
        let parents = vec![self.clone()];
        Ok(Tensor::from_op(out_shape, out, parents.clone(), || {
            Node::new(Tile0Vjp { reps }, parents)
        }))
    }
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::super::gradcheck::gradient_check_multi;
    use super::*;

    fn leaf(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::leaf(shape, data).unwrap()
    }

    #[test]
    fn add_broadcasts_channel_singleton() {
        // [1,2,2] + [1,1,2]
        let a = leaf(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&[1, 1, 2], vec![10.0, 20.0]);
        let y = a.add(&b).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[11.0, 22.0, 13.0, 24.0]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn broadcast_rejects_other_patterns() {
        let a = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[3, 2]).unwrap();
        assert!(a.add(&b).is_err());
        let c = Tensor::<f64>::zeros(&[2, 3, 4]).unwrap();
        let d = Tensor::<f64>::zeros(&[3, 4]).unwrap();
        assert!(c.add(&d).is_err());
        // Singleton at a non-channel axis must not broadcast.
        let e = Tensor::<f64>::zeros(&[1, 3, 4]).unwrap();
        let f = Tensor::<f64>::zeros(&[2, 3, 4]).unwrap();
        assert!(e.add(&f).is_err());
    }

    #[test]
    fn div_by_zero_is_domain_error() {
        let a = Tensor::<f64>::ones(&[2]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(a.div(&b), Err(Error::Domain { .. })));
    }

    #[test]
    fn ln_rejects_non_positive() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(x.ln(), Err(Error::Domain { .. })));
        let y = Tensor::<f64>::from_vec(&[1], vec![-2.0]).unwrap();
        assert!(y.ln().is_err());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let x = leaf(&[3], vec![-1.0, 0.0, 2.0]);
        let y = x.relu().unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn sum_and_mean_over_axes() {
        let x = leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = x.sum_axes(&[1], false).unwrap();
        assert_eq!(s.shape(), &[2]);
        assert_eq!(s.data(), &[6.0, 15.0]);
        let k = x.sum_axes(&[0], true).unwrap();
        assert_eq!(k.shape(), &[1, 3]);
        assert_eq!(k.data(), &[5.0, 7.0, 9.0]);
        let m = x.mean_all().unwrap();
        assert_eq!(m.rank(), 0);
        assert!((m.item().unwrap() - 3.5).abs() < 1e-15);
        m.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0 / 6.0; 6]);
    }

    #[test]
    fn max_ops_break_ties_low() {
        let x = leaf(&[2, 2], vec![3.0, 3.0, 1.0, 5.0]);
        let m = x.max_all().unwrap();
        assert_eq!(m.item().unwrap(), 5.0);
        m.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0, 1.0]);

        let a = x.max_axis(1, false).unwrap();
        assert_eq!(a.shape(), &[2]);
        assert_eq!(a.data(), &[3.0, 5.0]);
        a.sum_all().unwrap().backward().unwrap();
        // Tie in row 0 goes to column 0.
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 1.0]);

        assert_eq!(argmax_axis(&x, 1).unwrap(), vec![0, 1]);
    }

    #[test]
    fn logsumexp_matches_reference_value() {
        // Independently computed: lse(1,2,3) = 3.4076059644443803.
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.logsumexp(0, false).unwrap();
        assert_eq!(y.rank(), 0);
        assert!((y.item().unwrap() - 3.4076059644443803).abs() < 1e-14);
    }

    #[test]
    fn logsumexp_is_stable_for_large_inputs() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1000.0, 1000.0]).unwrap();
        let y = x.logsumexp(0, false).unwrap().item().unwrap();
        assert!((y - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-10);
    }

    #[test]
    fn softmax_matches_reference_value() {
        // Independently computed: softmax(2,0,0) has p0 = 0.7869860421615985.
        let x = Tensor::<f64>::from_vec(&[1, 3], vec![2.0, 0.0, 0.0]).unwrap();
        let p = x.softmax(1).unwrap();
        assert!((p.data()[0] - 0.7869860421615985).abs() < 1e-14);
        assert!((p.data()[1] - 0.10650697891920075).abs() < 1e-14);
        assert_eq!(p.data()[1], p.data()[2]);
    }

    #[test]
    fn softmax_gradient_is_bitwise_zero_under_constant_upstream() {
        // sum(softmax(x)) is constant, and the pairwise backward form must
        // return exact zeros, not rounding residue.
        let x = leaf(&[2, 5], vec![0.3, -1.2, 2.4, 0.0, 1.7, -0.5, 0.1, 0.2, -2.0, 3.0]);
        let s = x.softmax(1).unwrap().sum_all().unwrap();
        s.backward().unwrap();
        let g = x.grad().unwrap();
        for v in g {
            assert_eq!(v.to_bits(), 0.0f64.to_bits());
        }
    }

    #[test]
    fn gather_axis_picks_and_scatters() {
        let x = leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = x.gather_axis(1, &[2, 0]).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.data(), &[3.0, 4.0]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(x.gather_axis(1, &[0]).is_err());
        assert!(x.gather_axis(1, &[0, 3]).is_err());
    }

    #[test]
    fn tile0_stacks_and_sums_back() {
        let x = leaf(&[2], vec![1.5, -2.0]);
        let y = x.tile0(3).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn stop_gradient_blocks_one_operand() {
        // y = sg(x) * x  =>  dy/dx = sg(x) exactly (one factor only).
        let x = leaf(&[3], vec![2.0, -3.0, 0.5]);
        let y = x.stop_gradient().mul(&x).unwrap().sum_all().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -3.0, 0.5]);
    }

    #[test]
    fn finite_differences_agree_on_composite_expression() {
        let a = leaf(&[2, 2], vec![0.5, -1.0, 2.0, 0.3]);
        let b = leaf(&[2, 2], vec![1.5, 0.7, -0.2, 2.2]);
        let err = gradient_check_multi(
            |ins| {
                let x = &ins[0];
                let y = &ins[1];
                let p = x.mul(y)?.add(&y.exp()?)?;
                let q = p.relu()?.add(&x.softmax(1)?)?;
                q.logsumexp(0, false)?.sum_all()
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "max rel error {err}");
    }

    #[test]
    fn finite_differences_agree_on_reductions_and_gather() {
        let a = leaf(&[2, 3], vec![0.5, -1.0, 2.0, 0.3, 1.1, -0.4]);
        let err = gradient_check_multi(
            |ins| {
                let x = &ins[0];
                let g = x.gather_axis(1, &[2, 1])?;
                let m = x.mean_axes(&[0], true)?;
                let t = x.tile0(2)?.sum_axes(&[0], false)?;
                g.sum_all()?
                    .add(&m.sum_all()?)?
                    .add(&t.mul(&t)?.sum_all()?)
            },
            &[a],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "max rel error {err}");
    }

    #[test]
    fn finite_differences_agree_on_division() {
        let a = leaf(&[1, 2, 2], vec![0.5, -1.0, 2.0, 0.3]);
        let b = leaf(&[1, 1, 2], vec![1.5, 0.7]);
        let err = gradient_check_multi(
            |ins| ins[0].div(&ins[1])?.mul(&ins[0])?.sum_all(),
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "max rel error {err}");
    }
}
