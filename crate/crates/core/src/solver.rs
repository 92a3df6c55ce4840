//! The per-terminal local dual method: random-coordinate dual ascent on the
//! terminal's private shard, run for H steps per BS iteration.
//!
//! Each coordinate step maximizes the one-dimensional restriction of the
//! task dual. For the label-folded dual coordinate `a` of a sample with
//! features x and label y, writing m = y * <w, x> for the current margin and
//! q = ||x||^2 / ((lambda1 + lambda2) * n_b), the step objective is
//!
//! ```text
//! g(delta) = (a + delta) - gamma * (a + delta)^2 / 2 - delta * m - q * delta^2 / 2
//! ```
//!
//! over the box a + delta in [0, 1]. Concavity makes the clipped stationary
//! point
//!
//! ```text
//! delta* = clamp((1 - gamma * a - m) / (gamma + q), -a, 1 - a)
//! ```
//!
//! the exact maximizer. Applying delta also shifts the local weight copy by
//! `delta * y * x / ((lambda1 + lambda2) * n_b)`, which keeps the weight the
//! exact recovery image of the running dual; the task dual value increases
//! by g(delta) / n_b at every step, so ascent is monotone by construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::TerminalShard;
use crate::error::{Error, Result};
use crate::objective::{MarginLoss, RegulationParams, SmoothLoss};

/// The dual block owned by one terminal; every entry lies in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDual {
    /// Label-folded dual coordinates, one per local sample.
    pub alpha: Vec<f64>,
}

impl TerminalDual {
    /// All-zero block for a shard.
    pub fn zeros(len: usize) -> TerminalDual {
        TerminalDual {
            alpha: vec![0.0; len],
        }
    }
}

/// Result of one local round: the dual change, the matching weight change
/// and the number of coordinate steps actually taken. Only these summaries
/// leave the terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    /// Per-coordinate dual change for this terminal's block.
    pub delta_alpha: Vec<f64>,
    /// Weight-space image of `delta_alpha`.
    pub delta_w: Vec<f64>,
    /// Coordinate steps performed.
    pub iterations_used: usize,
}

/// Exact maximizer of the one-dimensional coordinate objective, clipped to
/// keep the dual coordinate in [0, 1].
///
/// `margin` is y * <w, x> at the current local weights, `norm_sq` is ||x||^2
/// and `n_b` the task-wide training count.
pub fn coordinate_update(
    alpha_i: f64,
    margin: f64,
    norm_sq: f64,
    reg_sum: f64,
    n_b: usize,
    gamma: f64,
) -> Result<f64> {
    if !margin.is_finite() || !norm_sq.is_finite() {
        return Err(Error::NonFinite("coordinate update inputs".into()));
    }
    if !(0.0..=1.0).contains(&alpha_i) {
        return Err(Error::InvalidParameter(format!(
            "dual coordinate {alpha_i} outside [0, 1]"
        )));
    }
    let q = norm_sq / (reg_sum * n_b as f64);
    let unclipped = (1.0 - gamma * alpha_i - margin) / (gamma + q);
    if unclipped.is_nan() {
        return Err(Error::NonFinite("coordinate step".into()));
    }
    Ok(unclipped.clamp(-alpha_i, 1.0 - alpha_i))
}

/// Value of the coordinate objective g at a candidate step, evaluated
/// through the conjugate function. Used by tests as the second route.
pub fn coordinate_objective(
    delta: f64,
    alpha_i: f64,
    margin: f64,
    norm_sq: f64,
    reg_sum: f64,
    n_b: usize,
    loss: &SmoothLoss,
) -> f64 {
    let a = alpha_i + delta;
    let q = norm_sq / (reg_sum * n_b as f64);
    -loss.conjugate(a) - delta * margin - q * delta * delta / 2.0
}

/// One terminal round: exactly `h` coordinate steps on a private copy of
/// the dual block and weights, sampling coordinates uniformly at random
/// with replacement from the local shard.
#[allow(clippy::too_many_arguments)]
pub fn local_round(
    shard: &TerminalShard,
    dual: &TerminalDual,
    w_task: &[f64],
    reg: &RegulationParams,
    loss: &SmoothLoss,
    n_b: usize,
    h: usize,
    rng_seed: u64,
) -> Result<LocalUpdate> {
    let size = shard.len();
    if dual.alpha.len() != size {
        return Err(Error::DimensionMismatch(format!(
            "terminal {:?}: dual len {} vs shard size {size}",
            shard.terminal_id,
            dual.alpha.len()
        )));
    }
    let dim = w_task.len();
    let mut delta_alpha = vec![0.0; size];
    let mut delta_w = vec![0.0; dim];
    if h == 0 {
        return Ok(LocalUpdate {
            delta_alpha,
            delta_w,
            iterations_used: 0,
        });
    }
    let mut alpha = dual.alpha.clone();
    let mut w = w_task.to_vec();
    let s = reg.sum();
    let scale = 1.0 / (s * n_b as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _ in 0..h {
        let i = rng.random_range(0..size);
        let sample = &shard.samples()[i];
        let margin = sample.label
            * w.iter()
                .zip(&sample.features)
                .map(|(wj, xj)| wj * xj)
                .sum::<f64>();
        let norm_sq: f64 = sample.features.iter().map(|x| x * x).sum();
        let delta = coordinate_update(alpha[i], margin, norm_sq, s, n_b, loss.gamma)?;
        // Apply the step that actually lands inside the box: addition can
        // round one ulp past the boundary, and the weight image must track
        // the stored value, not the requested step.
        let landed = (alpha[i] + delta).clamp(0.0, 1.0);
        let effective = landed - alpha[i];
        alpha[i] = landed;
        delta_alpha[i] += effective;
        let coef = effective * sample.label * scale;
        for (wj, xj) in w.iter_mut().zip(&sample.features) {
            *wj += coef * xj;
        }
        for (dwj, xj) in delta_w.iter_mut().zip(&sample.features) {
            *dwj += coef * xj;
        }
    }
    Ok(LocalUpdate {
        delta_alpha,
        delta_w,
        iterations_used: h,
    })
}

/// Reference one-dimensional maximizer used to cross-check the closed-form
/// coordinate step: golden-section search over the step interval.
pub mod oracle {
    use super::*;

    /// Golden-section maximization of a unimodal function on [lo, hi].
    pub fn golden_section_max(
        f: impl Fn(f64) -> f64,
        lo: f64,
        hi: f64,
        iters: usize,
    ) -> (f64, f64) {
        let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = f(c);
        let mut fd = f(d);
        for _ in 0..iters {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
        }
        let x = (a + b) / 2.0;
        (x, f(x))
    }

    /// Best coordinate step found by golden-section search on the conjugate
    /// form of the step objective.
    pub fn coordinate_update_reference(
        alpha_i: f64,
        margin: f64,
        norm_sq: f64,
        reg_sum: f64,
        n_b: usize,
        loss: &SmoothLoss,
    ) -> (f64, f64) {
        let g =
            |delta: f64| coordinate_objective(delta, alpha_i, margin, norm_sq, reg_sum, n_b, loss);
        golden_section_max(g, -alpha_i, 1.0 - alpha_i, 200)
    }
}
