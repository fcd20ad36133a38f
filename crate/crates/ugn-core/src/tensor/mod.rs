//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable value plus an optional record of the
//! operation that produced it. Running an op on tracked inputs appends a
//! node to the implicit computation graph; [`Tensor::backward`] replays the
//! recorded nodes in reverse creation order and accumulates vector-Jacobian
//! products into the gradient slots of the participating leaves.
//!
//! Gradients for a leaf are written by the most recent `backward` call;
//! within a single call, contributions from multiple uses of the same
//! tensor accumulate additively.

mod autograd;
mod gradcheck;
mod ops;

pub use autograd::Tape;
pub(crate) use autograd::{Node, Vjp, VjpCtx};
pub(crate) use gradcheck::{probe_weight, scalarize, weighted_sum};
pub use gradcheck::{gradient_check, gradient_check_multi};
pub use ops::argmax_axis;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Product of all extents; the empty shape is a scalar with one element.
pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for ax in (0..shape.len().saturating_sub(1)).rev() {
        s[ax] = s[ax + 1] * shape[ax + 1];
    }
    s
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Rc<Vec<T>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    node: Option<Node<T>>,
}

/// Immutable n-dimensional array participating in the autodiff graph.
///
/// Cloning is cheap (reference-counted); the underlying buffer is shared.
pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field(
                "op",
                &self
                    .inner
                    .node
                    .as_ref()
                    .map(|n| n.op.name())
                    .unwrap_or("leaf"),
            )
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn validate_shape(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(
                op,
                format!("zero extent in shape {shape:?}"),
            ));
        }
        let n = numel_of(shape);
        if n != len {
            return Err(Error::shape(
                op,
                format!("shape {shape:?} needs {n} elements, got {len}"),
            ));
        }
        Ok(())
    }

    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: Rc::new(data),
                requires_grad,
                grad: RefCell::new(None),
                node,
            }),
        }
    }

    /// Constant tensor (no gradient tracking) from row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::validate_shape("from_vec", shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Differentiable leaf from row-major data; `backward` fills its grad slot.
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::validate_shape("leaf", shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    /// Constant tensor filled with one value.
    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = numel_of(shape);
        Self::validate_shape("full", shape, n)?;
        Ok(Self::build(shape.to_vec(), vec![value; n], false, None))
    }

    /// Constant tensor of zeros.
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::ZERO)
    }

    /// Constant tensor of ones.
    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::ONE)
    }

    /// Rank-0 constant.
    pub fn scalar(value: T) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Constant tensor of standard-normal draws in row-major order.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Self> {
        let n = numel_of(shape);
        Self::validate_shape("randn", shape, n)?;
        let data = (0..n).map(|_| T::std_normal(rng)).collect();
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Result of an op: tracked only if at least one parent is tracked.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        op: impl FnOnce() -> Node<T>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        let tracked = parents.iter().any(Tensor::track);
        let node = if tracked { Some(op()) } else { None };
        Self::build(shape, data, false, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    /// Row-major view of the element buffer.
    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.inner.node.as_ref()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when this tensor participates in the autodiff graph, either as a
    /// differentiable leaf or as the output of a tracked op.
    pub(crate) fn track(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    /// Single element of a rank-0 or one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::contract(
                "item",
                format!("tensor has {} elements, expected 1", self.numel()),
            ));
        }
        Ok(self.inner.data[0])
    }

    /// Element at a full multi-index (row-major). Panics on a bad index;
    /// intended for tests and small diagnostics.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let strides = strides_of(self.shape());
        let mut off = 0usize;
        for (ax, &i) in index.iter().enumerate() {
            assert!(i < self.inner.shape[ax], "index out of bounds");
            off += i * strides[ax];
        }
        self.inner.data[off]
    }

    /// Gradient accumulated by the most recent `backward`, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    /// Gradient as a vector, with zeros when no gradient reached this leaf.
    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::ZERO; self.numel()])
    }

    /// Clears the stored gradient.
    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn set_grad(&self, g: Vec<T>) {
        debug_assert_eq!(g.len(), self.numel());
        *self.inner.grad.borrow_mut() = Some(g);
    }

    /// Forward-identity copy that is cut out of the autodiff graph: the
    /// returned tensor shares this buffer but no gradient flows through it.
    pub fn stop_gradient(&self) -> Tensor<T> {
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape: self.inner.shape.clone(),
                data: Rc::clone(&self.inner.data),
                requires_grad: false,
                grad: RefCell::new(None),
                node: None,
            }),
        }
    }

    /// Constant copy converted to another element type (graph not carried).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|&v| U::from_f64(v.to_f64()))
            .collect();
        Tensor::build(self.inner.shape.clone(), data, false, None)
    }

    /// Runs reverse-mode differentiation from this scalar, filling the grad
    /// slots of every differentiable leaf it depends on.
    pub fn backward(&self) -> Result<()> {
        autograd::backward(self)
    }
}

/// Free-function form of [`Tensor::stop_gradient`].
pub fn stop_gradient<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.stop_gradient()
}
