//! Finite-difference verification of reverse-mode gradients.
//!
//! The function under test is scalarized by a fixed pseudo-random weighting
//! of its outputs, so a single check exercises every output component. The
//! reported figure is the worst relative error
//! `|analytic - numeric| / max(1, |analytic| + |numeric|)` over all input
//! coordinates, using central differences.

use super::Tensor;
use crate::error::{Error, Result};

/// Deterministic probe weight for output component `i`, in `[0.5, 1.5)`.
/// Distinct, irrational-looking weights keep output components from
/// cancelling each other in the scalarized objective.
pub(crate) fn probe_weight(i: usize) -> f64 {
    // splitmix64 finalizer on the index.
    let mut z = (i as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    0.5 + (z >> 11) as f64 / (1u64 << 53) as f64
}

pub(crate) fn weighted_sum(out: &Tensor<f64>) -> f64 {
    out.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| probe_weight(i) * v)
        .sum()
}

pub(crate) fn scalarize(out: &Tensor<f64>) -> Result<Tensor<f64>> {
    let w: Vec<f64> = (0..out.numel()).map(probe_weight).collect();
    let wt = Tensor::from_vec(out.shape(), w)?;
    out.mul(&wt)?.sum_all()
}

/// Checks the gradients of `f` at `inputs` against central finite
/// differences with step `eps`; returns the worst relative error.
///
/// Every input must be a differentiable leaf. `f` must be deterministic
/// (seed any internal randomness); a non-finite value during probing is a
/// domain error.
pub fn gradient_check_multi<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::contract(
            "gradient_check",
            format!("eps must be positive and finite, got {eps}"),
        ));
    }
    if inputs.is_empty() {
        return Err(Error::contract("gradient_check", "no inputs given"));
    }
    if let Some(pos) = inputs.iter().position(|t| !t.requires_grad()) {
        return Err(Error::contract(
            "gradient_check",
            format!("input {pos} is not a differentiable leaf"),
        ));
    }

    for t in inputs {
        t.clear_grad();
    }
    let out = f(inputs)?;
    let loss = scalarize(&out)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = inputs.iter().map(Tensor::grad_or_zeros).collect();

    let eval_shifted = |slot: usize, coord: usize, delta: f64| -> Result<f64> {
        let shifted: Vec<Tensor<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == slot {
                    let mut d = t.data().to_vec();
                    d[coord] += delta;
                    Tensor::leaf(t.shape(), d)
                } else {
                    Ok(t.clone())
                }
            })
            .collect::<Result<_>>()?;
        let v = weighted_sum(&f(&shifted)?);
        if !v.is_finite() {
            return Err(Error::domain(
                "gradient_check",
                format!("non-finite objective while probing input {slot} coordinate {coord}"),
            ));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    for (slot, t) in inputs.iter().enumerate() {
        for coord in 0..t.numel() {
            let plus = eval_shifted(slot, coord, eps)?;
            let minus = eval_shifted(slot, coord, -eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[slot][coord];
            let err = (a - numeric).abs() / 1.0f64.max(a.abs() + numeric.abs());
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// Single-input convenience wrapper around [`gradient_check_multi`].
pub fn gradient_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    gradient_check_multi(|ins| f(&ins[0]), std::slice::from_ref(x), eps)
}
