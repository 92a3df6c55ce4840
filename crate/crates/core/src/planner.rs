//! Closed-form resource planning: the per-round duality-gap contraction
//! Theta(H), the data-interference constant sigma, the step-quality constant
//! eta, the BS-iteration bound, the projected-cost curve f(H), the
//! feasibility test and the three-regime selection of (H, K).

use serde::{Deserialize, Serialize};

use crate::config::{ConvergenceTarget, ResourceCosts};
use crate::data::FederatedDataset;
use crate::error::{Error, Result};

/// Largest instance accepted by the exact sigma probe.
pub const BRUTE_FORCE_LIMIT: usize = 64;

/// Per-task statistics the planner consumes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TaskStats {
    /// Training count n_b.
    pub n_b: usize,
    /// Largest terminal shard size.
    pub n_tilde: usize,
    /// Terminal count N_b.
    pub terminals: usize,
    /// Interference constant for this task (zero when unknown or when a
    /// single terminal holds all data).
    pub sigma: f64,
}

impl TaskStats {
    /// Extracts stats from a dataset task, attaching the given sigma.
    pub fn of_task(data: &FederatedDataset, task: usize, sigma: f64) -> TaskStats {
        let t = &data.tasks[task];
        TaskStats {
            n_b: t.n_b(),
            n_tilde: t.n_tilde(),
            terminals: t.terminals(),
            sigma,
        }
    }
}

/// Per-step contraction factor kappa_b in (0, 1): the product of the
/// smoothness-regularization ratio and the inverse largest-shard size.
fn kappa(n_b: usize, n_tilde: usize, gamma: f64, reg_sum: f64) -> f64 {
    let sng = reg_sum * n_b as f64 * gamma;
    (sng / (1.0 + sng)) / n_tilde as f64
}

/// Expected multiplicative reduction of the per-terminal duality gap after
/// `h` local coordinate steps:
///
/// ```text
/// Theta_b(h) = (1 - kappa_b)^h,
/// kappa_b = [s n_b gamma / (1 + s n_b gamma)] / n_tilde,  s = lambda1 + lambda2
/// ```
///
/// Theta(0) = 1 (no updates, no resource use) and Theta decays to zero as
/// h grows.
pub fn theta(h: usize, n_b: usize, n_tilde: usize, gamma: f64, lambda1: f64, lambda2: f64) -> f64 {
    let k = kappa(n_b, n_tilde, gamma, lambda1 + lambda2);
    (1.0 - k).powi(h as i32)
}

/// Log-domain evaluation of `theta`; second route for cross-checks.
pub fn theta_ln(
    h: usize,
    n_b: usize,
    n_tilde: usize,
    gamma: f64,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let k = kappa(n_b, n_tilde, gamma, lambda1 + lambda2);
    (h as f64 * (-k).ln_1p()).exp()
}

/// How to obtain the interference constant sigma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaMode {
    /// Closed-form upper bound valid for every dual vector.
    SafeBound,
    /// Exact maximization of the block quadratic form; only for small
    /// instances.
    BruteForce,
}

/// Estimates sigma for one task. The constant bounds, over all dual vectors
/// alpha, the cross-terminal interference
///
/// ```text
/// n_b^2 * (sum_t ||A_t alpha_t||^2 - ||A alpha||^2) / ||alpha||^2
/// ```
///
/// where A has columns y_i x_i / n_b and A_t is the block of terminal t.
///
/// Safe bound derivation: the numerator equals minus the sum of cross-block
/// inner products, so by Cauchy-Schwarz per pair, the spectral-to-Frobenius
/// bound per block and the pairwise mean inequality over block norms,
///
/// ```text
/// sigma_b <= (N_b - 1) * max_t sum_{i in t} ||x_i||^2
/// ```
///
/// Brute force: the numerator is the quadratic form of
/// `BlockDiag(G) - G`, G the Gram matrix of A's columns; its largest
/// eigenvalue (found by shifted power iteration) gives the exact constant.
pub fn sigma_estimate(data: &FederatedDataset, task: usize, mode: SigmaMode) -> Result<f64> {
    let td = &data.tasks[task];
    match mode {
        SigmaMode::SafeBound => {
            let worst_block: f64 = td
                .shards
                .iter()
                .map(|s| {
                    s.samples()
                        .iter()
                        .map(|x| x.features.iter().map(|v| v * v).sum::<f64>())
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            Ok((td.terminals() as f64 - 1.0) * worst_block)
        }
        SigmaMode::BruteForce => {
            let n = td.n_b();
            if n > BRUTE_FORCE_LIMIT {
                return Err(Error::BruteForceTooLarge {
                    n_b: n,
                    limit: BRUTE_FORCE_LIMIT,
                });
            }
            // Columns of A in dual order, including the label fold.
            let cols: Vec<Vec<f64>> = td
                .train_iter()
                .map(|s| s.features.iter().map(|x| s.label * x / n as f64).collect())
                .collect();
            let mut gram = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i..n {
                    let g = cols[i]
                        .iter()
                        .zip(&cols[j])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                    gram[i][j] = g;
                    gram[j][i] = g;
                }
            }
            // Block membership of each dual index.
            let mut block = vec![0usize; n];
            let mut idx = 0;
            for (t, shard) in td.shards.iter().enumerate() {
                for _ in 0..shard.len() {
                    block[idx] = t;
                    idx += 1;
                }
            }
            // M = BlockDiag(G) - G: keep within-block entries at zero,
            // negate cross-block ones.
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    if block[i] != block[j] {
                        m[i][j] = -gram[i][j];
                    }
                }
            }
            let lam_max = largest_eigenvalue(&m);
            Ok((n as f64) * (n as f64) * lam_max.max(0.0))
        }
    }
}

/// Largest (algebraic) eigenvalue of a symmetric matrix by power iteration
/// on a diagonally shifted copy.
fn largest_eigenvalue(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 0 {
        return 0.0;
    }
    // Gershgorin shift makes the matrix positive semidefinite so the power
    // method converges to the algebraically largest eigenvalue.
    let shift = m
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64) * 1e-3).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    let mut rayleigh = 0.0;
    for _ in 0..20_000 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut acc = shift * v[i];
            for j in 0..n {
                acc += m[i][j] * v[j];
            }
            next[i] = acc;
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in &mut next {
            *x /= norm;
        }
        let mut new_rayleigh = 0.0;
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += m[i][j] * next[j];
            }
            new_rayleigh += next[i] * acc;
        }
        let done = (new_rayleigh - rayleigh).abs() <= 1e-13 * (1.0 + new_rayleigh.abs());
        v = next;
        rayleigh = new_rayleigh;
        if done {
            break;
        }
    }
    rayleigh
}

/// Which published form of eta to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EtaVariant {
    /// The conservative form with sigma scaled by n_b (default: a smaller
    /// eta never under-provisions iterations).
    #[default]
    Theorem,
    /// The variant in which sigma appears unscaled.
    Proof,
}

/// Step-quality constant eta_b in (0, 1], decreasing in sigma.
pub fn eta(
    n_b: usize,
    sigma: f64,
    gamma: f64,
    lambda1: f64,
    lambda2: f64,
    variant: EtaVariant,
) -> f64 {
    let sg = (lambda1 + lambda2) * gamma;
    match variant {
        EtaVariant::Theorem => sg / (n_b as f64 * sigma + sg),
        EtaVariant::Proof => sg / (sigma + sg),
    }
}

/// Minimal integer count of BS iterations strictly exceeding
///
/// ```text
/// (1 - (1 - Theta) * eta_star / t_star) * ln(sum_b n_b / (N * eps_d))
/// ```
///
/// clamped to at least 1. Strictness is honored: an integral bound value
/// returns the next integer.
pub fn required_bs_iterations(
    theta_max: f64,
    eta_star: f64,
    t_star: usize,
    n_list: &[usize],
    eps_d: f64,
) -> usize {
    let bound = required_bs_iterations_real(theta_max, eta_star, t_star, n_list, eps_d);
    let k = bound.floor() as i64 + 1;
    k.max(1) as usize
}

/// Real-valued bound underlying `required_bs_iterations`.
pub fn required_bs_iterations_real(
    theta_max: f64,
    eta_star: f64,
    t_star: usize,
    n_list: &[usize],
    eps_d: f64,
) -> f64 {
    let beta = (1.0 - theta_max) * eta_star / t_star as f64;
    (1.0 - beta) * log_term(n_list, eps_d)
}

/// Second evaluation route for the same bound, running the logarithm and
/// the contraction through different expressions.
pub fn required_bs_iterations_real_alt(
    theta_max_ln: f64,
    eta_star: f64,
    t_star: usize,
    n_list: &[usize],
    eps_d: f64,
) -> f64 {
    let beta = (1.0 - theta_max_ln) * eta_star / t_star as f64;
    let total: f64 = n_list.iter().map(|&n| n as f64).sum();
    let log_term = total.ln() - (n_list.len() as f64).ln() - eps_d.ln();
    (1.0 - beta) * log_term
}

/// ln(sum_b n_b / (N * eps_d)).
pub fn log_term(n_list: &[usize], eps_d: f64) -> f64 {
    let total: f64 = n_list.iter().map(|&n| n as f64).sum();
    (total / (n_list.len() as f64 * eps_d)).ln()
}

/// Sum over tasks of the per-round charge for resource type j:
/// C_bs + N_b * h_b * C_dev.
pub fn round_cost(
    h_per_task: &[usize],
    stats: &[TaskStats],
    costs: &ResourceCosts,
    j: usize,
) -> f64 {
    stats
        .iter()
        .zip(h_per_task)
        .map(|(s, &h)| costs.c_bs[j] + s.terminals as f64 * h as f64 * costs.c_dev[j])
        .sum()
}

/// Projected resource consumption, for type j, of driving the duality gap
/// to the target with a uniform terminal-iteration count `h`:
///
/// ```text
/// f_j(h) = M * sum_b (C_bs + N_b h C_dev)
///            * (1 - (eta*/T*) * (1 - (1 - kappa_b)^h))
///            * ln(sum_b n_b / (N eps_d))
/// ```
#[allow(clippy::too_many_arguments)]
pub fn projected_cost(
    h: usize,
    costs: &ResourceCosts,
    target: &ConvergenceTarget,
    stats: &[TaskStats],
    gamma: f64,
    lambda1: f64,
    lambda2: f64,
    eta_star: f64,
    t_star: usize,
    j: usize,
) -> f64 {
    let n_list: Vec<usize> = stats.iter().map(|s| s.n_b).collect();
    let log = log_term(&n_list, target.eps_d);
    let mut total = 0.0;
    for s in stats {
        let th = theta(h, s.n_b, s.n_tilde, gamma, lambda1, lambda2);
        let bracket = 1.0 - eta_star / t_star as f64 * (1.0 - th);
        let per_round = costs.c_bs[j] + s.terminals as f64 * h as f64 * costs.c_dev[j];
        total += per_round * bracket;
    }
    target.m as f64 * total * log
}

/// Feasibility of per-task terminal-iteration counts: the projected cost
/// with the contraction taken at min_b h_b must be strictly below budget
/// for every resource type. Returns the first violated type otherwise.
#[allow(clippy::too_many_arguments)]
pub fn feasible(
    h_per_task: &[usize],
    costs: &ResourceCosts,
    target: &ConvergenceTarget,
    stats: &[TaskStats],
    gamma: f64,
    lambda1: f64,
    lambda2: f64,
    eta_star: f64,
    t_star: usize,
) -> (bool, Option<usize>) {
    let h_min = *h_per_task.iter().min().unwrap_or(&1);
    let n_list: Vec<usize> = stats.iter().map(|s| s.n_b).collect();
    let log = log_term(&n_list, target.eps_d);
    for j in 0..costs.types() {
        let mut total = 0.0;
        for (s, &h) in stats.iter().zip(h_per_task) {
            let th = theta(h_min, s.n_b, s.n_tilde, gamma, lambda1, lambda2);
            let bracket = 1.0 - eta_star / t_star as f64 * (1.0 - th);
            let per_round = costs.c_bs[j] + s.terminals as f64 * h as f64 * costs.c_dev[j];
            total += per_round * bracket;
        }
        if target.m as f64 * total * log >= costs.budget[j] {
            return (false, Some(j));
        }
    }
    (true, None)
}

/// Which branch of the budget logic produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Budget below the projected cost at every terminal-iteration count:
    /// pick the cost-minimizing H and spend what the budget allows.
    BudgetShort,
    /// Budget crosses the projected-cost curve: pick the largest affordable
    /// H and the convergence-bound K.
    BudgetCrossing,
    /// Budget above the curve everywhere: pick the smallest H and drain the
    /// budget with BS iterations, up to the configured cap.
    Surplus,
}

/// Selected iteration counts and their projected spend.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResourcePlan {
    /// Terminal iterations per task (uniform by default).
    pub h_per_task: Vec<usize>,
    /// BS iterations per server iteration.
    pub k: usize,
    /// Projected consumption per resource type for executing the full plan:
    /// M * K * sum_b (C_bs + N_b H_b C_dev).
    pub projected_cost: Vec<f64>,
    /// True when the plan is expected to reach the gap target within budget.
    pub feasible: bool,
    /// Which budget branch fired.
    pub regime: Regime,
    /// First violated resource type when infeasible.
    pub binding: Option<usize>,
}

/// K allowed by the budget alone: floor over resource types of
/// budget / (M * round cost), clamped to at least 1.
pub fn budget_ratio_k(
    h_per_task: &[usize],
    costs: &ResourceCosts,
    stats: &[TaskStats],
    m: usize,
) -> usize {
    let mut k = f64::INFINITY;
    for j in 0..costs.types() {
        let per = round_cost(h_per_task, stats, costs, j);
        if per > 0.0 {
            k = k.min((costs.budget[j] / (m as f64 * per)).floor());
        }
    }
    if k.is_finite() {
        (k as i64).max(1) as usize
    } else {
        usize::MAX
    }
}

/// Integer-valued projected spend of running the convergence-bound K at a
/// uniform h: M * K(h) * round cost. This is what the plan will actually
/// charge, so regime boundaries are tested against it.
#[allow(clippy::too_many_arguments)]
fn spend_with_bound_k(
    h: usize,
    costs: &ResourceCosts,
    target: &ConvergenceTarget,
    stats: &[TaskStats],
    gamma: f64,
    lambda1: f64,
    lambda2: f64,
    eta_star: f64,
    t_star: usize,
) -> (usize, Vec<f64>) {
    let n_list: Vec<usize> = stats.iter().map(|s| s.n_b).collect();
    let theta_max = stats
        .iter()
        .map(|s| theta(h, s.n_b, s.n_tilde, gamma, lambda1, lambda2))
        .fold(0.0, f64::max);
    let k = required_bs_iterations(theta_max, eta_star, t_star, &n_list, target.eps_d);
    let h_vec = vec![h; stats.len()];
    let spend = (0..costs.types())
        .map(|j| target.m as f64 * k as f64 * round_cost(&h_vec, stats, costs, j))
        .collect();
    (k, spend)
}

/// Three-regime plan selection over uniform terminal-iteration counts
/// 1..=h_max. Ties break toward smaller H.
#[allow(clippy::too_many_arguments)]
pub fn select_plan(
    costs: &ResourceCosts,
    target: &ConvergenceTarget,
    stats: &[TaskStats],
    gamma: f64,
    lambda1: f64,
    lambda2: f64,
    eta_star: f64,
    t_star: usize,
    h_max: usize,
    k_cap: usize,
) -> Result<ResourcePlan> {
    if h_max < 1 {
        return Err(Error::InvalidParameter("h_max must be >= 1".into()));
    }
    if stats.is_empty() {
        return Err(Error::InvalidParameter("no task statistics".into()));
    }
    costs.validate()?;

    let affordable = |h: usize| -> bool {
        let (_, spend) = spend_with_bound_k(
            h, costs, target, stats, gamma, lambda1, lambda2, eta_star, t_star,
        );
        spend.iter().zip(&costs.budget).all(|(s, b)| s <= b)
    };
    let affordable_set: Vec<usize> = (1..=h_max).filter(|&h| affordable(h)).collect();

    let plan = if affordable_set.is_empty() {
        // Budget never reaches the projected-cost curve: minimize the curve
        // and run as many BS iterations as the budget covers.
        let mut best_h = 1;
        let mut best_pressure = f64::INFINITY;
        for h in 1..=h_max {
            let mut pressure = 0.0f64;
            for j in 0..costs.types() {
                let f = projected_cost(
                    h, costs, target, stats, gamma, lambda1, lambda2, eta_star, t_star, j,
                );
                let denom = if costs.budget[j] > 0.0 && costs.budget[j].is_finite() {
                    costs.budget[j]
                } else {
                    1.0
                };
                pressure = pressure.max(f / denom);
            }
            if pressure < best_pressure - 1e-15 {
                best_pressure = pressure;
                best_h = h;
            }
        }
        let h_vec = vec![best_h; stats.len()];
        let k = budget_ratio_k(&h_vec, costs, stats, target.m)
            .min(k_cap)
            .max(1);
        let (_, binding) = feasible(
            &h_vec, costs, target, stats, gamma, lambda1, lambda2, eta_star, t_star,
        );
        let projected = (0..costs.types())
            .map(|j| target.m as f64 * k as f64 * round_cost(&h_vec, stats, costs, j))
            .collect();
        ResourcePlan {
            h_per_task: h_vec,
            k,
            projected_cost: projected,
            feasible: false,
            regime: Regime::BudgetShort,
            binding,
        }
    } else if affordable_set.len() == h_max {
        // Surplus: smallest H, budget-ratio K capped.
        let h_vec = vec![1; stats.len()];
        let k_budget = budget_ratio_k(&h_vec, costs, stats, target.m);
        let k = k_budget.min(k_cap).max(1);
        let projected = (0..costs.types())
            .map(|j| target.m as f64 * k as f64 * round_cost(&h_vec, stats, costs, j))
            .collect();
        ResourcePlan {
            h_per_task: h_vec,
            k,
            projected_cost: projected,
            feasible: true,
            regime: Regime::Surplus,
            binding: None,
        }
    } else {
        // Crossing: largest affordable H with the convergence-bound K.
        let h = *affordable_set.last().unwrap();
        let (k, spend) = spend_with_bound_k(
            h, costs, target, stats, gamma, lambda1, lambda2, eta_star, t_star,
        );
        ResourcePlan {
            h_per_task: vec![h; stats.len()],
            k,
            projected_cost: spend,
            feasible: true,
            regime: Regime::BudgetCrossing,
            binding: None,
        }
    };
    Ok(plan)
}
