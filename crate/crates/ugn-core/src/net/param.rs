//! Named, interior-mutable parameter slots shared between layers, the
//! optimizer, and checkpoint code.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::cell::RefCell;
use std::rc::Rc;

/// One learnable tensor with a stable name.
///
/// Handles are cheap to clone and all point at the same slot: a layer keeps
/// one to build its forward graph while the optimizer and checkpoint code
/// walk the same slots by name. [`Parameter::set_data`] installs a fresh
/// leaf tensor, so graphs recorded before an update keep referencing the
/// value they were built from.
#[derive(Clone)]
pub struct Parameter<T: Scalar> {
    inner: Rc<ParamInner<T>>,
}

struct ParamInner<T: Scalar> {
    name: String,
    value: RefCell<Tensor<T>>,
}

impl<T: Scalar> Parameter<T> {
    /// Wraps an initial value, which must be a differentiable leaf.
    pub fn new(name: impl Into<String>, init: Tensor<T>) -> Result<Parameter<T>> {
        let name = name.into();
        if !init.requires_grad() {
            return Err(Error::contract(
                "parameter",
                format!("initial value of '{name}' must be a differentiable leaf"),
            ));
        }
        Ok(Parameter {
            inner: Rc::new(ParamInner {
                name,
                value: RefCell::new(init),
            }),
        })
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.inner.value.borrow().numel()
    }

    /// Handle to the current value, for building a forward graph.
    pub fn value(&self) -> Tensor<T> {
        self.inner.value.borrow().clone()
    }

    /// Copy of the raw element buffer.
    pub fn data(&self) -> Vec<T> {
        self.inner.value.borrow().data().to_vec()
    }

    /// Gradient left on the current value by the latest backward pass.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.value.borrow().grad()
    }

    pub fn clear_grad(&self) {
        self.inner.value.borrow().clear_grad()
    }

    /// Replaces the stored value with a fresh leaf holding `data` (same
    /// shape, no gradient).
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        let shape = self.shape();
        if data.len() != self.numel() {
            return Err(Error::shape(
                "parameter",
                format!(
                    "'{}' holds {} elements, got {}",
                    self.name(),
                    self.numel(),
                    data.len()
                ),
            ));
        }
        *self.inner.value.borrow_mut() = Tensor::leaf(&shape, data)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clones_share_the_same_slot() {
        let p = Parameter::new("w", Tensor::<f64>::leaf(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
        let q = p.clone();
        p.set_data(vec![3.0, 4.0]).unwrap();
        assert_eq!(q.data(), vec![3.0, 4.0]);
        assert_eq!(q.name(), "w");
    }

    #[test]
    fn set_data_checks_length() {
        let p = Parameter::new("w", Tensor::<f64>::leaf(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert!(p.set_data(vec![1.0]).is_err());
    }

    #[test]
    fn rejects_non_leaf_values() {
        let c = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap();
        assert!(Parameter::new("c", c).is_err());
    }

    #[test]
    fn grad_follows_the_current_value() {
        let p = Parameter::new("w", Tensor::<f64>::leaf(&[1], vec![2.0]).unwrap()).unwrap();
        let v = p.value();
        v.mul(&v).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![4.0]);
        p.set_data(vec![5.0]).unwrap();
        assert!(p.grad().is_none());
    }
}
