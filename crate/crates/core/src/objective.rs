//! Loss functions, convex conjugates, primal and dual objectives, and the
//! dual-to-primal model recovery map.
//!
//! Labels are binary (-1/+1) and dual variables are stored label-folded:
//! the stored coordinate is the raw multiplier times the label, which puts
//! every dual coordinate in the conjugate domain [0, 1] uniformly. Under
//! that convention the effective data column for sample i is `y_i * x_i / n_b`
//! and the recovery map reads
//!
//! ```text
//! w_b = (lambda2 * r + sum_i alpha_i * y_i * x_i / n_b) / (lambda1 + lambda2)
//! ```

use crate::data::FederatedDataset;
use crate::error::{Error, Result};

/// Slack allowed before a negative primal-dual gap is treated as a bug.
pub const GAP_TOLERANCE: f64 = 1e-9;

/// Margin loss abstraction. The shipped loss is the smoothed hinge; other
/// margin losses would implement this same surface.
pub trait MarginLoss {
    /// Loss value at signed margin z.
    fn value(&self, z: f64) -> f64;
    /// Derivative with respect to the margin.
    fn derivative(&self, z: f64) -> f64;
    /// Convex conjugate evaluated at -a for label-folded dual a in [0, 1];
    /// returns positive infinity outside that interval.
    fn conjugate(&self, a: f64) -> f64;
}

/// Smoothed hinge loss with smoothness parameter gamma > 0. The second
/// derivative is bounded by 1/gamma everywhere it exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothLoss {
    /// Smoothness parameter, positive.
    pub gamma: f64,
}

impl SmoothLoss {
    /// Creates the loss, validating gamma > 0.
    pub fn new(gamma: f64) -> Result<SmoothLoss> {
        if gamma <= 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidParameter("gamma must be > 0".into()));
        }
        Ok(SmoothLoss { gamma })
    }
}

impl MarginLoss for SmoothLoss {
    fn value(&self, z: f64) -> f64 {
        let g = self.gamma;
        if z >= 1.0 {
            0.0
        } else if z <= 1.0 - g {
            1.0 - z - g / 2.0
        } else {
            (1.0 - z) * (1.0 - z) / (2.0 * g)
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        let g = self.gamma;
        if z >= 1.0 {
            0.0
        } else if z <= 1.0 - g {
            -1.0
        } else {
            -(1.0 - z) / g
        }
    }

    fn conjugate(&self, a: f64) -> f64 {
        if !(0.0..=1.0).contains(&a) {
            return f64::INFINITY;
        }
        -a + self.gamma * a * a / 2.0
    }
}

/// Checked loss evaluation used by external callers; rejects non-finite margins.
pub fn loss(z: f64, gamma: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite(format!("loss margin z = {z}")));
    }
    Ok(SmoothLoss::new(gamma)?.value(z))
}

/// Conjugate of the smoothed hinge at -a; +infinity signals out-of-domain.
pub fn loss_conjugate(a: f64, gamma: f64) -> f64 {
    SmoothLoss { gamma }.conjugate(a)
}

/// Regulation parameters: self weight, multi-task weight and the shared
/// anchor vector pulled toward by every task.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulationParams {
    /// Self-regulation weight, positive.
    pub lambda1: f64,
    /// Multi-task weight, nonnegative.
    pub lambda2: f64,
    /// Shared anchor vector of length d.
    pub r: Vec<f64>,
}

impl RegulationParams {
    /// Creates validated regulation parameters.
    pub fn new(lambda1: f64, lambda2: f64, r: Vec<f64>) -> Result<RegulationParams> {
        if lambda1 <= 0.0 || !lambda1.is_finite() {
            return Err(Error::InvalidParameter("lambda1 must be > 0".into()));
        }
        if lambda2 < 0.0 || !lambda2.is_finite() {
            return Err(Error::InvalidParameter("lambda2 must be >= 0".into()));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regulation anchor r".into()));
        }
        Ok(RegulationParams {
            lambda1,
            lambda2,
            r,
        })
    }

    /// lambda1 + lambda2.
    pub fn sum(&self) -> f64 {
        self.lambda1 + self.lambda2
    }
}

/// Per-task primal model.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    /// Weight vector of length d.
    pub w: Vec<f64>,
    /// Task index.
    pub task_id: usize,
}

impl TaskModel {
    /// Zero model of dimension d.
    pub fn zeros(dim: usize, task_id: usize) -> TaskModel {
        TaskModel {
            w: vec![0.0; dim],
            task_id,
        }
    }
}

/// Dual state: one label-folded dual vector per task, laid out as the
/// concatenation of per-terminal blocks in terminal order.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    /// `per_task[b]` has length n_b.
    pub per_task: Vec<Vec<f64>>,
}

impl DualState {
    /// All-zero duals matching the dataset layout.
    pub fn zeros(data: &FederatedDataset) -> DualState {
        DualState {
            per_task: data.tasks.iter().map(|t| vec![0.0; t.n_b()]).collect(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Primal objective: mean over tasks of the per-task regularized empirical
/// loss, using the margin y * <w, x> and both regulation terms.
pub fn primal_objective(
    models: &[TaskModel],
    reg: &RegulationParams,
    loss: &SmoothLoss,
    data: &FederatedDataset,
) -> Result<f64> {
    if models.len() != data.tasks.len() {
        return Err(Error::DimensionMismatch(format!(
            "models: {} tasks, dataset: {} tasks",
            models.len(),
            data.tasks.len()
        )));
    }
    let mut total = 0.0;
    for (model, task) in models.iter().zip(&data.tasks) {
        total += primal_objective_task(model, reg, loss, data, task.index)?;
    }
    Ok(total / data.tasks.len() as f64)
}

/// Per-task primal value (empirical loss plus both regulation terms).
pub fn primal_objective_task(
    model: &TaskModel,
    reg: &RegulationParams,
    loss: &SmoothLoss,
    data: &FederatedDataset,
    task: usize,
) -> Result<f64> {
    let td = &data.tasks[task];
    if model.w.len() != data.dim || reg.r.len() != data.dim {
        return Err(Error::DimensionMismatch(format!(
            "task {task}: model dim {} / anchor dim {} vs data dim {}",
            model.w.len(),
            reg.r.len(),
            data.dim
        )));
    }
    let mut loss_sum = 0.0;
    for shard in &td.shards {
        for s in shard.samples() {
            let margin = s.label * dot(&model.w, &s.features);
            loss_sum += loss.value(margin);
        }
    }
    let n_b = td.n_b() as f64;
    let mut diff_sq = 0.0;
    for (wi, ri) in model.w.iter().zip(&reg.r) {
        diff_sq += (wi - ri) * (wi - ri);
    }
    Ok(loss_sum / n_b + reg.lambda1 / 2.0 * norm_sq(&model.w) + reg.lambda2 / 2.0 * diff_sq)
}

/// Dual objective: mean over tasks of the per-task dual value.
pub fn dual_objective(
    alpha: &DualState,
    reg: &RegulationParams,
    loss: &SmoothLoss,
    data: &FederatedDataset,
) -> Result<f64> {
    if alpha.per_task.len() != data.tasks.len() {
        return Err(Error::DimensionMismatch(format!(
            "duals: {} tasks, dataset: {} tasks",
            alpha.per_task.len(),
            data.tasks.len()
        )));
    }
    let mut total = 0.0;
    for b in 0..data.tasks.len() {
        total += dual_objective_task(&alpha.per_task[b], reg, loss, data, b)?;
    }
    Ok(total / data.tasks.len() as f64)
}

/// Per-task dual value. With v = A_b alpha_b (columns y_i x_i / n_b):
///
/// ```text
/// D_b = (1/n_b) sum_i -L*(-alpha_i)
///     + [lambda1*lambda2*||r||^2 - ||v||^2 - 2*lambda2*<v, r>] / (2*(lambda1+lambda2))
/// ```
///
/// The anchor-term coefficient is lambda1*lambda2: that is the value produced
/// by minimizing the regularized Lagrangian in w, and it is what makes the
/// gap vanish at the optimum and keeps weak duality valid for every weight
/// pair.
pub fn dual_objective_task(
    alpha_b: &[f64],
    reg: &RegulationParams,
    loss: &SmoothLoss,
    data: &FederatedDataset,
    task: usize,
) -> Result<f64> {
    let td = &data.tasks[task];
    if alpha_b.len() != td.n_b() {
        return Err(Error::DimensionMismatch(format!(
            "task {task}: alpha len {} vs n_b {}",
            alpha_b.len(),
            td.n_b()
        )));
    }
    if reg.r.len() != data.dim {
        return Err(Error::DimensionMismatch(format!(
            "anchor dim {} vs data dim {}",
            reg.r.len(),
            data.dim
        )));
    }
    let n_b = td.n_b() as f64;
    let mut conj_sum = 0.0;
    let v = weighted_data_combination(alpha_b, data, task)?;
    for &a in alpha_b {
        conj_sum += -loss.conjugate(a);
    }
    let s = reg.sum();
    let quad = reg.lambda1 * reg.lambda2 * norm_sq(&reg.r)
        - norm_sq(&v)
        - 2.0 * reg.lambda2 * dot(&v, &reg.r);
    Ok(conj_sum / n_b + quad / (2.0 * s))
}

/// Computes v = sum_i alpha_i * y_i * x_i / n_b for one task.
pub(crate) fn weighted_data_combination(
    alpha_b: &[f64],
    data: &FederatedDataset,
    task: usize,
) -> Result<Vec<f64>> {
    let td = &data.tasks[task];
    if alpha_b.len() != td.n_b() {
        return Err(Error::DimensionMismatch(format!(
            "task {task}: alpha len {} vs n_b {}",
            alpha_b.len(),
            td.n_b()
        )));
    }
    let n_b = td.n_b() as f64;
    let mut v = vec![0.0; data.dim];
    let mut idx = 0;
    for shard in &td.shards {
        for s in shard.samples() {
            let coef = alpha_b[idx] * s.label / n_b;
            for (vj, xj) in v.iter_mut().zip(&s.features) {
                *vj += coef * xj;
            }
            idx += 1;
        }
    }
    Ok(v)
}

/// Recovers the primal model for one task from its dual block:
/// w = (lambda2 * r + v) / (lambda1 + lambda2).
pub fn recover_weights(
    alpha_b: &[f64],
    reg: &RegulationParams,
    data: &FederatedDataset,
    task: usize,
) -> Result<TaskModel> {
    let v = weighted_data_combination(alpha_b, data, task)?;
    if reg.r.len() != data.dim {
        return Err(Error::DimensionMismatch(format!(
            "anchor dim {} vs data dim {}",
            reg.r.len(),
            data.dim
        )));
    }
    let s = reg.sum();
    let w = v
        .iter()
        .zip(&reg.r)
        .map(|(vj, rj)| (reg.lambda2 * rj + vj) / s)
        .collect();
    Ok(TaskModel { w, task_id: task })
}

/// Combines primal and dual values into a gap, rejecting negative gaps
/// beyond rounding tolerance (those indicate an evaluation bug).
pub fn gap_from_values(primal: f64, dual: f64) -> Result<f64> {
    let gap = primal - dual;
    if gap < -GAP_TOLERANCE {
        return Err(Error::InvariantViolation(format!(
            "negative duality gap {gap}: primal {primal} < dual {dual}"
        )));
    }
    Ok(gap)
}

/// Primal-dual gap at models that must be the recovery image of `alpha`.
/// The consistency requirement is enforced, not assumed: models further
/// than 1e-9 (relative) from the recovered weights are rejected.
pub fn duality_gap(
    models: &[TaskModel],
    alpha: &DualState,
    reg: &RegulationParams,
    loss: &SmoothLoss,
    data: &FederatedDataset,
) -> Result<f64> {
    if models.len() != alpha.per_task.len() {
        return Err(Error::DimensionMismatch(
            "models and duals disagree on task count".into(),
        ));
    }
    for (b, model) in models.iter().enumerate() {
        let recovered = recover_weights(&alpha.per_task[b], reg, data, b)?;
        let denom = 1.0 + norm_sq(&model.w).sqrt();
        let mut diff = 0.0;
        for (a, c) in model.w.iter().zip(&recovered.w) {
            diff += (a - c) * (a - c);
        }
        if diff.sqrt() / denom > 1e-9 {
            return Err(Error::InvariantViolation(format!(
                "task {b}: model is not the recovery image of its dual (relative distance {})",
                diff.sqrt() / denom
            )));
        }
    }
    let p = primal_objective(models, reg, loss, data)?;
    let d = dual_objective(alpha, reg, loss, data)?;
    gap_from_values(p, d)
}
