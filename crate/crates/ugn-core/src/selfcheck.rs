//! Runtime gradient and invariant self-test suite.
//!
//! The `gradcheck` command runs this suite and prints one line per check.
//! Every differentiable operation gets a randomized 64-bit finite-difference
//! sweep, the assembled three-level gate/fusion network gets one end to end,
//! and the closed-form anchors of the uncertainty and optimizer math are
//! re-derived at reduced scale. All randomness is internally seeded: a given
//! trial count always checks the same numbers, so a passing build keeps
//! passing.

use crate::error::{Error, Result};
use crate::net::{fuse_levels, fuse_levels_with, gate_refine, gate_refine_with, HeadPair, Parameter};
use crate::nn::{
    batchnorm2d, conv2d, crossentropy_axis, crossentropy_from_logits, maxpool2d,
    upsample_nearest, BatchNormState, Conv2dParams,
};
use crate::rngstream::derive_rng;
use crate::tensor::{
    gradient_check, gradient_check_multi, probe_weight, scalarize, weighted_sum, Tensor,
};
use crate::train::WnAdam;
use crate::uncertainty::{
    gamma_map, sample_logits, uncertainty_loss, GammaClassMode, UncertaintyConfig,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

/// Relative-error ceiling for every finite-difference check.
pub const FD_TOL: f64 = 1e-4;

/// Central-difference step used by the suite.
const EPS: f64 = 1e-5;

/// Root seed of the suite; every check derives its own stream from it.
const SUITE_SEED: u64 = 11;

/// Infinite-sample γ for two classes with zero logits and unit sigma in
/// winner mode (E[sigmoid|d|], d ~ N(0, √2), evaluated to 64-bit precision).
const GAMMA_INF_C2_SIGMA1: f64 = 0.3212405676944274;

/// Label-mode γ limits for logits (−2, 2) with label 0 at σ = 1 and
/// σ = 0.01, evaluated to 64-bit precision.
const GAMMA_ATTEN_SIGMA1: f64 = 3.20326705492;
const GAMMA_ATTEN_SIGMA001: f64 = 4.01805525983;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &str, detail: String) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed: true,
            detail,
        }
    }

    fn fail(name: &str, detail: String) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed: false,
            detail,
        }
    }

    fn graded(name: &str, worst: f64, trials: usize) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed: worst < FD_TOL,
            detail: format!(
                "worst relative error {worst:.2e} over {trials} trial(s) (tolerance {FD_TOL:.0e})"
            ),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "pass" } else { "FAIL" };
        write!(f, "[{status}] {} — {}", self.name, self.detail)
    }
}

/// Runs the whole suite with `trials` random instances per operation
/// (clamped to at least 1) and returns one result per check.
pub fn run(trials: usize) -> Vec<CheckResult> {
    let trials = trials.max(1);
    let mut out = Vec::new();

    out.push(fd_suite("fd/add", trials, |r| {
        binary_trial(r, 0.0, |a, b| a.add(b))
    }));
    out.push(fd_suite("fd/sub", trials, |r| {
        binary_trial(r, 0.0, |a, b| a.sub(b))
    }));
    out.push(fd_suite("fd/mul", trials, |r| {
        binary_trial(r, 0.0, |a, b| a.mul(b))
    }));
    out.push(fd_suite("fd/div", trials, |r| {
        binary_trial(r, 0.5, |a, b| a.div(b))
    }));
    out.push(fd_suite("fd/neg", trials, |r| {
        unary_trial(r, 1.0, 0.0, |t| t.neg())
    }));
    out.push(fd_suite("fd/affine", trials, |r| {
        let a = r.random_range(-2.0..2.0);
        let b = r.random_range(-1.0..1.0);
        unary_trial(r, 1.0, 0.0, move |t| t.affine(a, b))
    }));
    out.push(fd_suite("fd/exp", trials, |r| {
        unary_trial(r, 0.5, 0.0, |t| t.exp())
    }));
    out.push(fd_suite("fd/ln", trials, ln_trial));
    out.push(fd_suite("fd/relu", trials, |r| {
        // Inputs are pushed away from the kink at zero; the step stays well
        // inside the margin.
        unary_trial(r, 1.0, 0.2, |t| t.relu())
    }));
    out.push(fd_suite("fd/sum", trials, |r| reduce_trial(r, false)));
    out.push(fd_suite("fd/mean", trials, |r| reduce_trial(r, true)));
    out.push(fd_suite("fd/max", trials, max_trial));
    out.push(fd_suite("fd/logsumexp", trials, |r| {
        let shape = rand_shape(r, 1);
        let axis = r.random_range(0..shape.len());
        let keep = r.random_bool(0.5);
        let x = leaf_randn(r, &shape, 1.0, 0.0)?;
        gradient_check(|t| t.logsumexp(axis, keep), &x, EPS)
    }));
    out.push(fd_suite("fd/softmax", trials, |r| {
        let shape = rand_shape(r, 1);
        let axis = r.random_range(0..shape.len());
        let x = leaf_randn(r, &shape, 1.0, 0.0)?;
        gradient_check(|t| t.softmax(axis), &x, EPS)
    }));
    out.push(fd_suite("fd/gather", trials, gather_trial));
    out.push(fd_suite("fd/tile", trials, |r| {
        let shape = rand_shape(r, 1);
        let reps = r.random_range(1..=3);
        let x = leaf_randn(r, &shape, 1.0, 0.0)?;
        gradient_check(|t| t.tile0(reps), &x, EPS)
    }));
    out.push(fd_suite("fd/conv2d", trials, conv_trial));
    out.push(fd_suite("fd/maxpool2d", trials, maxpool_trial));
    out.push(fd_suite("fd/upsample", trials, |r| {
        let n = r.random_range(1..=2);
        let c = r.random_range(1..=2);
        let h = r.random_range(1..=3);
        let w = r.random_range(1..=3);
        let factor = r.random_range(1..=3);
        let x = leaf_randn(r, &[n, c, h, w], 1.0, 0.0)?;
        gradient_check(|t| upsample_nearest(t, factor), &x, EPS)
    }));
    out.push(fd_suite("fd/batchnorm", trials, batchnorm_trial));
    out.push(fd_suite("fd/crossentropy", trials, crossentropy_trial));
    out.push(fd_suite("fd/uncertainty", trials, uncertainty_trial));
    out.push(network_check());

    out.push(stop_gradient_check());
    out.push(gamma_limit_check());
    out.push(gamma_bounds_check());
    out.push(gamma_montecarlo_check());
    out.push(attenuation_check());
    out.push(wnadam_step_check());
    out.push(wnadam_quadratic_check());

    out
}

// ---------------------------------------------------------------------------
// finite-difference plumbing
// ---------------------------------------------------------------------------

fn fd_suite<F>(name: &'static str, trials: usize, trial: F) -> CheckResult
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64>,
{
    let mut worst = 0.0f64;
    for i in 0..trials {
        let mut rng = derive_rng(SUITE_SEED, name, &[i as u64]);
        match trial(&mut rng) {
            Ok(err) => worst = worst.max(err),
            Err(e) => return CheckResult::fail(name, format!("trial {i} failed: {e}")),
        }
    }
    CheckResult::graded(name, worst, trials)
}

/// Finite-difference check of `f` against the gradients it leaves on
/// `params`, perturbing the parameter slots in place. Each probe rebuilds
/// the graph through the same closure, so `f` must be deterministic.
fn fd_params<F>(f: &F, params: &[Parameter<f64>], eps: f64) -> Result<f64>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for p in params {
        p.clear_grad();
    }
    let loss = scalarize(&f()?)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut worst = 0.0f64;
    for (slot, p) in params.iter().enumerate() {
        let base = p.data();
        for coord in 0..base.len() {
            let mut d = base.clone();
            d[coord] = base[coord] + eps;
            p.set_data(d)?;
            let plus = weighted_sum(&f()?);
            let mut d = base.clone();
            d[coord] = base[coord] - eps;
            p.set_data(d)?;
            let minus = weighted_sum(&f()?);
            p.set_data(base.clone())?;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::domain(
                    "selfcheck",
                    format!(
                        "non-finite objective while probing '{}' coordinate {coord}",
                        p.name()
                    ),
                ));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[slot][coord];
            let err = (a - numeric).abs() / 1.0f64.max(a.abs() + numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// random input generators
// ---------------------------------------------------------------------------

fn rand_shape(rng: &mut ChaCha8Rng, min_rank: usize) -> Vec<usize> {
    let rank = rng.random_range(min_rank..=3);
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

/// Standard-normal leaf scaled by `scale`, with every element pushed at
/// least `margin` away from zero (for kinked ops).
fn leaf_randn(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    scale: f64,
    margin: f64,
) -> Result<Tensor<f64>> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = scale * rng.sample::<f64, _>(StandardNormal);
            if v >= 0.0 {
                v + margin
            } else {
                v - margin
            }
        })
        .collect();
    Tensor::leaf(shape, data)
}

/// Strictly positive leaf: `scale·|N(0,1)| + floor`.
fn leaf_pos(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64, floor: f64) -> Result<Tensor<f64>> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal).abs() + floor)
        .collect();
    Tensor::leaf(shape, data)
}

/// Widens the winner's lead within one group of flat indices to at least
/// `gap`, so a finite-difference step cannot flip an argmax.
fn separate_maxima(data: &mut [f64], group: &[usize], gap: f64) {
    if group.len() < 2 {
        return;
    }
    let mut best = group[0];
    for &i in &group[1..] {
        if data[i] > data[best] {
            best = i;
        }
    }
    let runner = group
        .iter()
        .filter(|&&i| i != best)
        .map(|&i| data[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if data[best] - runner < gap {
        data[best] = runner + gap;
    }
}

// ---------------------------------------------------------------------------
// per-op trials
// ---------------------------------------------------------------------------

fn binary_trial<F>(rng: &mut ChaCha8Rng, rhs_margin: f64, op: F) -> Result<f64>
where
    F: Fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
{
    // Half the trials exercise axis-1 singleton broadcasting.
    let bcast = rng.random_bool(0.5);
    let shape = rand_shape(rng, if bcast { 2 } else { 1 });
    let mut rhs_shape = shape.clone();
    let mut lhs_shape = shape.clone();
    if bcast {
        if rng.random_bool(0.5) {
            rhs_shape[1] = 1;
        } else {
            lhs_shape[1] = 1;
        }
    }
    let a = leaf_randn(rng, &lhs_shape, 1.0, 0.0)?;
    let b = leaf_randn(rng, &rhs_shape, 1.0, rhs_margin)?;
    gradient_check_multi(|ins| op(&ins[0], &ins[1]), &[a, b], EPS)
}

fn unary_trial<F>(rng: &mut ChaCha8Rng, scale: f64, margin: f64, op: F) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let shape = rand_shape(rng, 1);
    let x = leaf_randn(rng, &shape, scale, margin)?;
    gradient_check(|t| op(t), &x, EPS)
}

fn ln_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = rand_shape(rng, 1);
    let x = leaf_pos(rng, &shape, 0.7, 0.3)?;
    gradient_check(|t| t.ln(), &x, EPS)
}

fn reduce_trial(rng: &mut ChaCha8Rng, mean: bool) -> Result<f64> {
    let shape = rand_shape(rng, 1);
    let x = leaf_randn(rng, &shape, 1.0, 0.0)?;
    if rng.random_bool(0.3) {
        return gradient_check(|t| if mean { t.mean_all() } else { t.sum_all() }, &x, EPS);
    }
    let mut axes: Vec<usize> = (0..shape.len()).filter(|_| rng.random_bool(0.5)).collect();
    if axes.is_empty() {
        axes.push(rng.random_range(0..shape.len()));
    }
    let keep = rng.random_bool(0.5);
    gradient_check(
        |t| {
            if mean {
                t.mean_axes(&axes, keep)
            } else {
                t.sum_axes(&axes, keep)
            }
        },
        &x,
        EPS,
    )
}

fn max_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = rand_shape(rng, 1);
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    if rng.random_bool(0.3) {
        let all: Vec<usize> = (0..n).collect();
        separate_maxima(&mut data, &all, 1e-3);
        let x = Tensor::leaf(&shape, data)?;
        return gradient_check(|t| t.max_all(), &x, EPS);
    }
    let axis = rng.random_range(0..shape.len());
    let keep = rng.random_bool(0.5);
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            let lane: Vec<usize> = (0..extent).map(|k| (o * extent + k) * inner + i).collect();
            separate_maxima(&mut data, &lane, 1e-3);
        }
    }
    let x = Tensor::leaf(&shape, data)?;
    gradient_check(|t| t.max_axis(axis, keep), &x, EPS)
}

fn gather_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = rand_shape(rng, 1);
    let axis = rng.random_range(0..shape.len());
    let lanes: usize = shape.iter().product::<usize>() / shape[axis];
    let idx: Vec<usize> = (0..lanes).map(|_| rng.random_range(0..shape[axis])).collect();
    let x = leaf_randn(rng, &shape, 1.0, 0.0)?;
    gradient_check(|t| t.gather_axis(axis, &idx), &x, EPS)
}

fn conv_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    // (kernel, stride, padding) combinations covering the shapes the
    // encoder actually uses, plus floor-sized odd cases.
    const CONFIGS: [(usize, usize, usize); 5] =
        [(1, 1, 0), (3, 1, 1), (3, 2, 1), (2, 2, 0), (3, 1, 0)];
    let (k, stride, padding) = CONFIGS[rng.random_range(0..CONFIGS.len())];
    let lo = (k as isize - 2 * padding as isize).max(1) as usize;
    let h = rng.random_range(lo..=5);
    let w = rng.random_range(lo..=5);
    let n = rng.random_range(1..=2);
    let cin = rng.random_range(1..=2);
    let cout = rng.random_range(1..=2);
    let has_bias = rng.random_bool(0.5);

    let x = leaf_randn(rng, &[n, cin, h, w], 1.0, 0.0)?;
    let kernel = leaf_randn(rng, &[cout, cin, k, k], 0.5, 0.0)?;
    let mut inputs = vec![x, kernel];
    if has_bias {
        inputs.push(leaf_randn(rng, &[cout], 0.5, 0.0)?);
    }
    gradient_check_multi(
        |ins| {
            let p = Conv2dParams {
                kernel: ins[1].clone(),
                bias: has_bias.then(|| ins[2].clone()),
                stride,
                padding,
            };
            conv2d(&ins[0], &p)
        },
        &inputs,
        EPS,
    )
}

fn maxpool_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    // Window placements are chosen disjoint so widening one winner's lead
    // cannot disturb a neighboring window.
    const CONFIGS: [(usize, usize, usize, usize, usize); 3] =
        [(2, 2, 0, 4, 4), (3, 3, 1, 7, 7), (2, 2, 1, 6, 4)];
    let (window, stride, padding, h, w) = CONFIGS[rng.random_range(0..CONFIGS.len())];
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=2);
    let numel = n * c * h * w;
    let mut data: Vec<f64> = (0..numel).map(|_| rng.sample(StandardNormal)).collect();

    let ho = (h + 2 * padding - window) / stride + 1;
    let wo = (w + 2 * padding - window) / stride + 1;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut cells = Vec::new();
                    for ky in 0..window {
                        let y = (oy * stride + ky) as isize - padding as isize;
                        if y < 0 || y as usize >= h {
                            continue;
                        }
                        for kx in 0..window {
                            let x = (ox * stride + kx) as isize - padding as isize;
                            if x < 0 || x as usize >= w {
                                continue;
                            }
                            cells.push(base + y as usize * w + x as usize);
                        }
                    }
                    separate_maxima(&mut data, &cells, 1e-3);
                }
            }
        }
    }
    let x = Tensor::leaf(&[n, c, h, w], data)?;
    gradient_check(|t| maxpool2d(t, window, stride, padding), &x, EPS)
}

fn batchnorm_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(2..=3);
    let c = rng.random_range(1..=3);
    let h = rng.random_range(1..=3);
    let w = rng.random_range(1..=3);
    let training = rng.random_bool(0.5);

    let x = leaf_randn(rng, &[n, c, h, w], 1.0, 0.0)?;
    let scale_data: Vec<f64> = (0..c)
        .map(|_| 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let shift_data: Vec<f64> = (0..c)
        .map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let scale = Tensor::leaf(&[c], scale_data)?;
    let shift = Tensor::leaf(&[c], shift_data)?;
    let run_mean: Vec<f64> = (0..c)
        .map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let run_var: Vec<f64> = (0..c)
        .map(|_| 0.5 + 0.3 * rng.sample::<f64, _>(StandardNormal).abs())
        .collect();

    let inputs = [x, scale, shift];
    gradient_check_multi(
        |ins| {
            // Fresh statistic buffers per evaluation: training mode folds
            // batch statistics into them, and probes must not accumulate.
            let st = BatchNormState::from_parts(
                ins[1].clone(),
                ins[2].clone(),
                Rc::new(RefCell::new(run_mean.clone())),
                Rc::new(RefCell::new(run_var.clone())),
                0.9,
                1e-5,
            )?;
            batchnorm2d(&ins[0], &st, training)
        },
        &inputs,
        EPS,
    )
}

fn crossentropy_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let pixel_form = rng.random_bool(0.5);
    let (shape, axis) = if pixel_form {
        let n = rng.random_range(1..=2);
        let c = rng.random_range(2..=4);
        let h = rng.random_range(1..=3);
        let w = rng.random_range(1..=3);
        (vec![n, c, h, w], 1)
    } else {
        let shape = rand_shape(rng, 2);
        let axis = rng.random_range(0..shape.len());
        (shape, axis)
    };
    let classes = shape[axis];
    let lanes: usize = shape.iter().product::<usize>() / classes;
    let labels: Vec<usize> = (0..lanes).map(|_| rng.random_range(0..classes)).collect();
    let mut valid: Vec<bool> = (0..lanes).map(|_| rng.random_bool(0.8)).collect();
    valid[0] = true;
    let x = leaf_randn(rng, &shape, 1.0, 0.0)?;
    gradient_check(
        |t| {
            if pixel_form {
                crossentropy_from_logits(t, &labels, &valid)
            } else {
                crossentropy_axis(t, axis, &labels, &valid)
            }
        },
        &x,
        EPS,
    )
}

fn uncertainty_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let classes = rng.random_range(2..=4);
    let (h, w) = (2, 2);
    let label_mode = rng.random_bool(0.5);
    let shape = [1, classes, h, w];

    let (l, s) = if label_mode {
        (
            leaf_randn(rng, &shape, 1.0, 0.0)?,
            leaf_randn(rng, &shape, 0.5, 0.0)?.affine(1.0, -2.0)?,
        )
    } else {
        // Winner mode has an argmax inside: give each pixel a dominant
        // class and keep the predicted noise small so no probe flips it.
        let mut ldata = vec![0.0f64; classes * h * w];
        for p in 0..h * w {
            let c = rng.random_range(0..classes);
            for k in 0..classes {
                ldata[k * h * w + p] =
                    0.3 * rng.sample::<f64, _>(StandardNormal) + if k == c { 4.0 } else { 0.0 };
            }
        }
        (
            Tensor::leaf(&shape, ldata)?,
            leaf_randn(rng, &shape, 0.3, 0.0)?.affine(1.0, -4.0)?,
        )
    };
    // `affine` above makes s an interior node; re-leaf its values.
    let s = Tensor::leaf(&shape, s.data().to_vec())?;

    let labels: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..classes)).collect();
    let mut valid: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.8)).collect();
    valid[0] = true;
    let cfg = UncertaintyConfig {
        samples: 3,
        gamma_class_mode: if label_mode {
            GammaClassMode::Label
        } else {
            GammaClassMode::Winner
        },
        clamp_fusion_weight: true,
    };
    let noise = rng.clone();
    let inputs = [l, s];
    gradient_check_multi(
        |ins| {
            let lhat = sample_logits(&ins[0], &ins[1], cfg.samples, &mut noise.clone())?;
            let gamma = gamma_map(&lhat, &cfg, label_mode.then_some(labels.as_slice()))?;
            uncertainty_loss(&gamma, &valid)
        },
        &inputs,
        EPS,
    )
}

// ---------------------------------------------------------------------------
// assembled network and invariants
// ---------------------------------------------------------------------------

/// Three-level pyramid leaves plus matching fresh head pairs.
fn small_network(
    rng: &mut ChaCha8Rng,
    width: usize,
    classes: usize,
) -> Result<(Vec<Tensor<f64>>, Vec<HeadPair<f64>>)> {
    let shapes = [[1, width, 8, 8], [1, width, 4, 4], [1, width, 2, 2]];
    let mut feats = Vec::new();
    for sh in &shapes {
        feats.push(leaf_randn(rng, sh, 0.5, 0.0)?);
    }
    let mut heads = Vec::new();
    for j in 0..3 {
        heads.push(HeadPair::new(&format!("head{j}"), width, classes, -2.0, rng)?);
    }
    Ok((feats, heads))
}

fn network_check() -> CheckResult {
    let name = "fd/network";
    match network_worst_error() {
        Ok(worst) => {
            let mut res = CheckResult::graded(name, worst, 1);
            res.detail = format!("3-level network, {}", res.detail);
            res
        }
        Err(e) => CheckResult::fail(name, format!("could not run: {e}")),
    }
}

/// Finite-difference sweep of the full loss — cross-entropy, uncertainty,
/// and fusion terms — through the undetached three-level refinement chain,
/// with respect to every pyramid feature and head weight.
fn network_worst_error() -> Result<f64> {
    let mut rng = derive_rng(SUITE_SEED, "network", &[]);
    let classes = 3;
    let (feats, heads) = small_network(&mut rng, 3, classes)?;

    let feat_params: Vec<Parameter<f64>> = feats
        .iter()
        .enumerate()
        .map(|(i, t)| Parameter::new(format!("g{i}"), t.clone()))
        .collect::<Result<_>>()?;
    let mut params = feat_params.clone();
    for h in &heads {
        h.collect_params(&mut params);
    }

    let ucfg = UncertaintyConfig {
        samples: 3,
        gamma_class_mode: GammaClassMode::Winner,
        clamp_fusion_weight: false,
    };
    let noise = rng.clone();

    // Learn the per-level grids from a dry run, then fix labels.
    let g0: Vec<Tensor<f64>> = feat_params.iter().map(Parameter::value).collect();
    let dry = gate_refine_with(&g0, &heads, &ucfg, &mut noise.clone(), false)?;
    let labels: Vec<Vec<usize>> = dry
        .iter()
        .map(|lv| {
            let px = lv.logits.shape()[2] * lv.logits.shape()[3];
            (0..px).map(|_| rng.random_range(0..classes)).collect()
        })
        .collect();

    let f = || -> Result<Tensor<f64>> {
        let g: Vec<Tensor<f64>> = feat_params.iter().map(Parameter::value).collect();
        let levels = gate_refine_with(&g, &heads, &ucfg, &mut noise.clone(), false)?;
        let mut total = Tensor::scalar(0.0);
        for (i, lv) in levels.iter().enumerate() {
            let px = lv.logits.shape()[2] * lv.logits.shape()[3];
            let valid = vec![true; px];
            let ce = crossentropy_from_logits(&lv.logits, &labels[i], &valid)?;
            let unc = uncertainty_loss(&lv.gamma, &valid)?.affine(0.1, 0.0)?;
            total = total.add(&ce)?.add(&unc)?;
        }
        let fused = fuse_levels_with(&levels, (8, 8), false, 1.0 / 3.0, false)?;
        let probe: Vec<f64> = (0..fused.numel()).map(probe_weight).collect();
        let probe_t = Tensor::from_vec(fused.shape(), probe)?;
        total.add(&fused.mul(&probe_t)?.sum_all()?.affine(0.05, 0.0)?)
    };
    fd_params(&f, &params, EPS)
}

fn stop_gradient_check() -> CheckResult {
    let name = "invariant/stop-gradient";
    match stop_gradient_violation() {
        Ok(None) => CheckResult::pass(
            name,
            "head gradients exactly zero through gate and fusion paths; all feature levels \
             received gradient"
                .to_string(),
        ),
        Ok(Some(msg)) => CheckResult::fail(name, msg),
        Err(e) => CheckResult::fail(name, format!("could not run: {e}")),
    }
}

/// Production-mode refinement with a loss that reaches the heads only
/// through γ: a probe-weighted sum of the refined memory (gate path) plus a
/// plain sum of the fused scores (fusion path). Both γ uses are detached,
/// and the per-pixel-constant upstream keeps the remaining softmax path
/// identically zero, so every head gradient must vanish exactly while the
/// pyramid features still receive gradient.
fn stop_gradient_violation() -> Result<Option<String>> {
    let mut rng = derive_rng(SUITE_SEED, "stop-gradient", &[]);
    let (feats, heads) = small_network(&mut rng, 3, 3)?;
    let ucfg = UncertaintyConfig {
        samples: 3,
        gamma_class_mode: GammaClassMode::Winner,
        clamp_fusion_weight: true,
    };
    let levels = gate_refine(&feats, &heads, &ucfg, &mut rng)?;
    let b0 = &levels.last().expect("three levels").b_bar;
    let probe: Vec<f64> = (0..b0.numel()).map(probe_weight).collect();
    let probe_t = Tensor::from_vec(b0.shape(), probe)?;
    let fused = fuse_levels(&levels, (8, 8), true)?;
    let loss = b0.mul(&probe_t)?.sum_all()?.add(&fused.sum_all()?)?;
    loss.backward()?;

    let mut head_params = Vec::new();
    for h in &heads {
        h.collect_params(&mut head_params);
    }
    for p in &head_params {
        if let Some(g) = p.grad() {
            if let Some(pos) = g.iter().position(|&v| v != 0.0) {
                return Ok(Some(format!(
                    "head parameter '{}' leaked gradient {} at coordinate {pos}",
                    p.name(),
                    g[pos]
                )));
            }
        }
    }
    for (i, t) in feats.iter().enumerate() {
        let grad = t.grad().unwrap_or_default();
        if !grad.iter().any(|&v| v != 0.0) {
            return Ok(Some(format!("feature level {i} received no gradient")));
        }
    }
    Ok(None)
}

fn gamma_limit_check() -> CheckResult {
    let name = "invariant/gamma-limit";
    let tol = 1e-6;
    match gamma_limit_worst() {
        Ok(worst) => CheckResult {
            name: name.to_string(),
            passed: worst < tol,
            detail: format!(
                "σ→0 γ vs −log softmax: worst absolute gap {worst:.2e} (tolerance {tol:.0e})"
            ),
        },
        Err(e) => CheckResult::fail(name, format!("could not run: {e}")),
    }
}

/// At σ→0 every sample collapses onto the logits, so γ must equal the
/// plain −log softmax of the chosen class, in both class modes.
fn gamma_limit_worst() -> Result<f64> {
    let mut rng = derive_rng(SUITE_SEED, "gamma-limit", &[]);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let classes = rng.random_range(2..=5);
        let (h, w) = (2, 2);
        let shape = [1, classes, h, w];
        let l = leaf_randn(&mut rng, &shape, 1.5, 0.0)?;
        let s = Tensor::full(&shape, -80.0)?;
        let lhat = sample_logits(&l, &s, 5, &mut rng)?;

        let label_mode = trial % 2 == 1;
        let labels: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..classes)).collect();
        let cfg = UncertaintyConfig {
            samples: 5,
            gamma_class_mode: if label_mode {
                GammaClassMode::Label
            } else {
                GammaClassMode::Winner
            },
            clamp_fusion_weight: true,
        };
        let gamma = gamma_map(&lhat, &cfg, label_mode.then_some(labels.as_slice()))?;

        for p in 0..h * w {
            let logits: Vec<f64> = (0..classes).map(|c| l.data()[c * h * w + p]).collect();
            let chosen = if label_mode {
                labels[p]
            } else {
                let mut best = 0;
                for (c, &v) in logits.iter().enumerate() {
                    if v > logits[best] {
                        best = c;
                    }
                }
                best
            };
            let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            let expected = (lse - logits[chosen]).max(0.0);
            let got = gamma.values().data()[p];
            worst = worst.max((got - expected).abs());
        }
    }
    Ok(worst)
}

fn gamma_bounds_check() -> CheckResult {
    let name = "invariant/gamma-bounds";
    match gamma_bounds_violation() {
        Ok((pixels, None)) => CheckResult::pass(
            name,
            format!("{pixels} winner-mode pixels within [0, ln C + 1e-6]"),
        ),
        Ok((_, Some(msg))) => CheckResult::fail(name, msg),
        Err(e) => CheckResult::fail(name, format!("could not run: {e}")),
    }
}

fn gamma_bounds_violation() -> Result<(usize, Option<String>)> {
    let cfg = UncertaintyConfig {
        samples: 7,
        gamma_class_mode: GammaClassMode::Winner,
        clamp_fusion_weight: true,
    };
    let mut pixels = 0usize;
    for i in 0..100u64 {
        let mut rng = derive_rng(SUITE_SEED, "gamma-bounds", &[i]);
        let classes = rng.random_range(2..=6);
        let shape = [1, classes, 10, 10];
        let l = leaf_randn(&mut rng, &shape, 2.0, 0.0)?;
        let s = leaf_randn(&mut rng, &shape, 1.0, 0.0)?;
        let lhat = sample_logits(&l, &s, cfg.samples, &mut rng)?;
        let gamma = gamma_map(&lhat, &cfg, None)?;
        let bound = (classes as f64).ln() + 1e-6;
        for (p, &v) in gamma.values().data().iter().enumerate() {
            pixels += 1;
            if !(0.0..=bound).contains(&v) {
                return Ok((
                    pixels,
                    Some(format!(
                        "γ = {v} at pixel {p} of set {i} escapes [0, ln {classes} + 1e-6]"
                    )),
                ));
            }
        }
    }
    Ok((pixels, None))
}

fn gamma_montecarlo_check() -> CheckResult {
    let name = "invariant/gamma-montecarlo";
    let tol = 2e-2;
    let run = || -> Result<f64> {
        let mut rng = derive_rng(SUITE_SEED, "gamma-montecarlo", &[]);
        let l = Tensor::<f64>::zeros(&[1, 2, 1, 1])?;
        let s = Tensor::<f64>::zeros(&[1, 2, 1, 1])?;
        let cfg = UncertaintyConfig {
            samples: 20_000,
            gamma_class_mode: GammaClassMode::Winner,
            clamp_fusion_weight: true,
        };
        let lhat = sample_logits(&l, &s, cfg.samples, &mut rng)?;
        Ok(gamma_map(&lhat, &cfg, None)?.values().data()[0])
    };
    match run() {
        Ok(got) => CheckResult {
            name: name.to_string(),
            passed: (got - GAMMA_INF_C2_SIGMA1).abs() < tol,
            detail: format!(
                "C=2 σ=1 winner γ at T=20000: {got:.5} vs limit {GAMMA_INF_C2_SIGMA1:.5} \
                 (tolerance {tol})"
            ),
        },
        Err(e) => CheckResult::fail(name, format!("could not run: {e}")),
    }
}

fn attenuation_check() -> CheckResult {
    let name = "invariant/attenuation";
    let run = || -> Result<(f64, f64)> {
        let l = Tensor::<f64>::from_vec(&[1, 2, 1, 1], vec![-2.0, 2.0])?;
        let cfg = UncertaintyConfig {
            samples: 10_000,
            gamma_class_mode: GammaClassMode::Label,
            clamp_fusion_weight: true,
        };
        let gamma_at = |sigma: f64, tag: u64| -> Result<f64> {
            let mut rng = derive_rng(SUITE_SEED, "attenuation", &[tag]);
            let s = Tensor::full(&[1, 2, 1, 1], 2.0 * sigma.ln())?;
            let lhat = sample_logits(&l, &s, cfg.samples, &mut rng)?;
            Ok(gamma_map(&lhat, &cfg, Some(&[0]))?.values().data()[0])
        };
        Ok((gamma_at(1.0, 0)?, gamma_at(0.01, 1)?))
    };
    match run() {
        Ok((hi, lo)) => {
            let ordered = hi < lo;
            let near = (hi - GAMMA_ATTEN_SIGMA1).abs() < 0.15
                && (lo - GAMMA_ATTEN_SIGMA001).abs() < 0.15;
            CheckResult {
                name: name.to_string(),
                passed: ordered && near,
                detail: format!(
                    "label-mode γ for l=(−2,2), label 0 at T=10000: γ(σ=1)={hi:.4} < \
                     γ(σ=0.01)={lo:.4} expected near ({GAMMA_ATTEN_SIGMA1:.4}, \
                     {GAMMA_ATTEN_SIGMA001:.4})"
                ),
            }
        }
        Err(e) => CheckResult::fail(name, format!("could not run: {e}")),
    }
}

fn wnadam_step_check() -> CheckResult {
    let name = "invariant/wnadam-step";
    let run = || -> Result<Option<String>> {
        let p = Parameter::new("x", Tensor::<f64>::leaf(&[1], vec![1.0])?)?;
        p.value().sum_all()?.backward()?;
        let mut opt = WnAdam::new(0.9)?;
        opt.step(std::slice::from_ref(&p), 1.0)?;
        let slot = opt.slot("x").expect("slot created on first step");
        let expect_m = (1.0 - 0.9) * 1.0;
        if slot.m[0] != expect_m {
            return Ok(Some(format!("m = {}, expected {expect_m}", slot.m[0])));
        }
        if slot.b[0] != 2.0 {
            return Ok(Some(format!("b = {}, expected 2", slot.b[0])));
        }
        if p.data()[0] != 0.5 {
            return Ok(Some(format!("x = {}, expected 0.5", p.data()[0])));
        }
        Ok(None)
    };
    match run() {
        Ok(None) => CheckResult::pass(
            name,
            "g=1, lr=1 hand recursion exact: m=0.1, b=2, x: 1 → 0.5".to_string(),
        ),
        Ok(Some(msg)) => CheckResult::fail(name, msg),
        Err(e) => CheckResult::fail(name, format!("could not run: {e}")),
    }
}

fn wnadam_quadratic_check() -> CheckResult {
    let name = "invariant/wnadam-quadratic";
    let run = || -> Result<Option<usize>> {
        let p = Parameter::new("x", Tensor::<f64>::leaf(&[1], vec![3.0])?)?;
        let mut opt = WnAdam::new(0.9)?;
        for step in 1..=500usize {
            let x = p.value();
            x.mul(&x)?.sum_all()?.backward()?;
            opt.step(std::slice::from_ref(&p), 0.5)?;
            if p.data()[0].abs() < 1e-3 {
                return Ok(Some(step));
            }
        }
        Ok(None)
    };
    match run() {
        Ok(Some(step)) => CheckResult::pass(
            name,
            format!("f(x)=x² from x=3 reached |x| < 1e-3 at step {step} of 500"),
        ),
        Ok(None) => CheckResult::fail(
            name,
            "f(x)=x² from x=3 did not reach |x| < 1e-3 within 500 steps".to_string(),
        ),
        Err(e) => CheckResult::fail(name, format!("could not run: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_reduced_trials() {
        let results = run(4);
        for r in &results {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn check_names_are_unique_and_stable() {
        let results = run(1);
        let mut names: Vec<&str> = results.iter().map(|r| r.name.as_str()).collect();
        let total = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), total, "duplicate check names");
        for expected in [
            "fd/conv2d",
            "fd/network",
            "invariant/stop-gradient",
            "invariant/gamma-montecarlo",
            "invariant/wnadam-step",
        ] {
            assert!(names.contains(&expected), "missing check {expected}");
        }
    }

    #[test]
    fn display_marks_failures() {
        let bad = CheckResult::fail("demo", "broke".to_string());
        assert_eq!(format!("{bad}"), "[FAIL] demo — broke");
        let good = CheckResult::pass("demo", "ok".to_string());
        assert!(format!("{good}").starts_with("[pass]"));
    }
}
