//! WNAdam: Adam-style momentum with a weight-normalized accumulator.
//!
//! Per coordinate, with gradient `g`:
//!
//! ```text
//! m ← β₁·m + (1−β₁)·g        first moment
//! m̂ = m / (1 − β₁ᵗ)          bias correction, t counted from 1
//! b ← b + g²/b               accumulator, b₀ = 1
//! x ← x − lr·m̂/b
//! ```
//!
//! `b` never decreases, so effective step sizes shrink as squared gradient
//! mass accumulates; starting at `b₀ = 1` keeps the first steps scale-free.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::net::Parameter;
use crate::scalar::Scalar;

/// Per-parameter optimizer slot.
#[derive(Debug, Clone, PartialEq)]
pub struct WnAdamSlot<T: Scalar> {
    /// First moment, zero-initialized.
    pub m: Vec<T>,
    /// Squared-gradient accumulator, one-initialized and nondecreasing.
    pub b: Vec<T>,
}

/// WNAdam state over a named parameter set.
///
/// Slots are created lazily the first time a parameter is stepped, keyed by
/// parameter name, so checkpoints can save and restore them by name.
#[derive(Debug, Clone)]
pub struct WnAdam<T: Scalar> {
    beta1: T,
    steps: u64,
    slots: BTreeMap<String, WnAdamSlot<T>>,
}

impl<T: Scalar> WnAdam<T> {
    /// A fresh optimizer; `beta1` must lie strictly inside (0, 1).
    pub fn new(beta1: f64) -> Result<WnAdam<T>> {
        if !(beta1 > 0.0 && beta1 < 1.0) {
            return Err(Error::contract(
                "WnAdam::new",
                format!("beta1 must lie in (0, 1), got {beta1}"),
            ));
        }
        Ok(WnAdam {
            beta1: T::from_f64(beta1),
            steps: 0,
            slots: BTreeMap::new(),
        })
    }

    /// Completed step count.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// The momentum coefficient.
    pub fn beta1(&self) -> T {
        self.beta1
    }

    /// The slot for a parameter, if it has been stepped or restored.
    pub fn slot(&self, name: &str) -> Option<&WnAdamSlot<T>> {
        self.slots.get(name)
    }

    /// All slots in name order, for checkpointing.
    pub fn slots(&self) -> impl Iterator<Item = (&str, &WnAdamSlot<T>)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Installs a slot verbatim (checkpoint restore). `m` and `b` must have
    /// equal lengths and `b` must be positive everywhere.
    pub fn restore_slot(&mut self, name: impl Into<String>, m: Vec<T>, b: Vec<T>) -> Result<()> {
        const OP: &str = "WnAdam::restore_slot";
        if m.len() != b.len() {
            return Err(Error::shape(
                OP,
                format!("m holds {} values, b holds {}", m.len(), b.len()),
            ));
        }
        if b.iter().any(|&v| !(v.to_f64() > 0.0) || !v.is_finite()) {
            return Err(Error::domain(OP, "accumulator b must be positive and finite"));
        }
        self.slots.insert(name.into(), WnAdamSlot { m, b });
        Ok(())
    }

    /// Overwrites the completed step count (checkpoint restore).
    pub fn restore_steps(&mut self, steps: u64) {
        self.steps = steps;
    }

    /// Applies one update to every parameter from its current gradient.
    ///
    /// Parameters without a gradient (not reached by the last backward pass)
    /// are treated as having zero gradient: their momentum still decays and
    /// may move them. The whole step is atomic — if any gradient holds a
    /// non-finite value, nothing (parameters, slots, or the step counter)
    /// changes and an error names the offending parameter.
    pub fn step(&mut self, params: &[Parameter<T>], lr: T) -> Result<()> {
        const OP: &str = "WnAdam::step";
        if !lr.is_finite() {
            return Err(Error::domain(OP, format!("learning rate {lr} is not finite")));
        }
        // Validation pass: gradients finite and shaped like their parameter.
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(params.len());
        for p in params {
            let g = p.grad();
            if let Some(g) = &g {
                if g.len() != p.numel() {
                    return Err(Error::shape(
                        OP,
                        format!(
                            "gradient of `{}` holds {} values, parameter has {}",
                            p.name(),
                            g.len(),
                            p.numel()
                        ),
                    ));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::domain(
                        OP,
                        format!("non-finite gradient for `{}`; step rejected", p.name()),
                    ));
                }
            }
            if let Some(slot) = self.slots.get(p.name()) {
                if slot.m.len() != p.numel() {
                    return Err(Error::shape(
                        OP,
                        format!(
                            "slot for `{}` holds {} values, parameter has {}",
                            p.name(),
                            slot.m.len(),
                            p.numel()
                        ),
                    ));
                }
            }
            grads.push(g);
        }

        // Update pass.
        self.steps += 1;
        let correction = T::from_f64(1.0 - self.beta1.to_f64().powi(self.steps as i32));
        let one_minus = T::ONE - self.beta1;
        for (p, g) in params.iter().zip(grads) {
            let slot = self.slots.entry(p.name().to_string()).or_insert_with(|| {
                WnAdamSlot {
                    m: vec![T::ZERO; p.numel()],
                    b: vec![T::ONE; p.numel()],
                }
            });
            let mut x = p.data();
            for i in 0..x.len() {
                let gi = g.as_ref().map_or(T::ZERO, |g| g[i]);
                slot.m[i] = self.beta1 * slot.m[i] + one_minus * gi;
                let m_hat = slot.m[i] / correction;
                let b = slot.b[i] + gi * gi / slot.b[i];
                slot.b[i] = b;
                x[i] -= lr * m_hat / b;
            }
            p.set_data(x)?;
        }
        Ok(())
    }
}
