//! Graph recording and the reverse sweep.
//!
//! Each tracked op output owns a [`Node`]: the parent tensors plus a boxed
//! [`Vjp`] that maps the upstream gradient to per-parent gradients. Tensor
//! ids are assigned in creation order, so sorting the reachable nodes by
//! descending id yields a topological order in which every node is visited
//! after all of its consumers.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::{HashMap, HashSet};

/// Context handed to a [`Vjp`] during the reverse sweep.
pub(crate) struct VjpCtx<'a, T: Scalar> {
    /// Shape of the op output.
    pub out_shape: &'a [usize],
    /// Forward value of the op output.
    pub out_data: &'a [T],
    /// d(loss)/d(output), same layout as `out_data`.
    pub upstream: &'a [T],
    /// The op inputs, in the order they were recorded.
    pub parents: &'a [Tensor<T>],
    /// Per-parent flag: false means the gradient will be discarded, so the
    /// op may skip computing it.
    pub needs: &'a [bool],
}

/// Vector-Jacobian product of one primitive op.
pub(crate) trait Vjp<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Returns one gradient per parent (aligned with `ctx.parents`); `None`
    /// marks a parent that receives no gradient.
    fn vjp(&self, ctx: &VjpCtx<'_, T>) -> Vec<Option<Vec<T>>>;
}

/// Recorded provenance of a tracked tensor.
pub(crate) struct Node<T: Scalar> {
    pub op: Box<dyn Vjp<T>>,
    pub parents: Vec<Tensor<T>>,
}

impl<T: Scalar> Node<T> {
    pub(crate) fn new(op: impl Vjp<T> + 'static, parents: Vec<Tensor<T>>) -> Self {
        Node {
            op: Box::new(op),
            parents,
        }
    }
}

/// The tracked tensors reachable from one root, in reverse creation order.
///
/// Creation ids grow monotonically and every op output is created after its
/// inputs, so this order visits each tensor only after every consumer of it
/// on the path from the root.
pub struct Tape<T: Scalar> {
    entries: Vec<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    /// Collects every tracked tensor the root depends on (including itself).
    pub fn trace(root: &Tensor<T>) -> Tape<T> {
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut entries = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.track() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(node) = t.node() {
                for p in &node.parents {
                    stack.push(p.clone());
                }
            }
            entries.push(t);
        }
        entries.sort_by(|a, b| b.id().cmp(&a.id()));
        Tape { entries }
    }

    /// Number of tracked tensors on the tape.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reverse sweep from a scalar root. See [`Tensor::backward`].
pub(crate) fn backward<T: Scalar>(root: &Tensor<T>) -> Result<()> {
    if root.numel() != 1 {
        return Err(Error::contract(
            "backward",
            format!(
                "root must be a scalar, got shape {:?}",
                root.shape()
            ),
        ));
    }
    if !root.track() {
        return Err(Error::contract(
            "backward",
            "root does not depend on any differentiable leaf",
        ));
    }

    let tape = Tape::trace(root);
    let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
    grads.insert(root.id(), vec![T::ONE]);

    for t in &tape.entries {
        // A tensor with no accumulated upstream contributes nothing; this
        // happens when it feeds the root only through stop_gradient.
        let Some(g) = grads.remove(&t.id()) else {
            continue;
        };
        match t.node() {
            None => {
                if t.requires_grad() {
                    t.set_grad(g);
                }
            }
            Some(node) => {
                let needs: Vec<bool> = node.parents.iter().map(Tensor::track).collect();
                let ctx = VjpCtx {
                    out_shape: t.shape(),
                    out_data: t.data(),
                    upstream: &g,
                    parents: &node.parents,
                    needs: &needs,
                };
                let pgrads = node.op.vjp(&ctx);
                debug_assert_eq!(pgrads.len(), node.parents.len());
                for ((parent, pg), need) in node.parents.iter().zip(pgrads).zip(&needs) {
                    let (Some(pg), true) = (pg, *need) else {
                        continue;
                    };
                    debug_assert_eq!(pg.len(), parent.numel());
                    match grads.entry(parent.id()) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            for (acc, v) in e.get_mut().iter_mut().zip(&pg) {
                                *acc += *v;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(pg);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_orders_consumers_before_inputs() {
        let x = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.exp().unwrap();
        let z = y.sum_all().unwrap();
        let tape = Tape::trace(&z);
        assert_eq!(tape.len(), 3);
        let ids: Vec<u64> = tape.entries.iter().map(|t| t.id()).collect();
        assert!(ids.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(ids[0], z.id());
        assert_eq!(ids[2], x.id());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let x = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.exp().unwrap();
        let err = y.backward().unwrap_err();
        assert!(matches!(err, Error::Contract { .. }));
    }

    #[test]
    fn backward_rejects_untracked_root() {
        let x = Tensor::<f64>::from_vec(&[1], vec![2.0]).unwrap();
        let y = x.exp().unwrap();
        assert!(y.backward().is_err());
    }

    #[test]
    fn diamond_reuse_accumulates_additively() {
        // z = x*x + x  =>  dz/dx = 2x + 1
        let x = Tensor::<f64>::leaf(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let z = x.mul(&x).unwrap().add(&x).unwrap().sum_all().unwrap();
        z.backward().unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g, vec![3.0, -3.0, 2.0]);
    }

    #[test]
    fn leaf_root_gets_unit_gradient() {
        let x = Tensor::<f64>::leaf(&[1], vec![5.0]).unwrap();
        x.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn second_backward_replaces_gradients() {
        let x = Tensor::<f64>::leaf(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap().sum_all().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        let z = x.affine(4.0, 0.0).unwrap().sum_all().unwrap();
        z.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }
}
