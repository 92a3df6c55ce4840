//! System configuration: hyperparameters, resource costs and convergence target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of tasks (one per base station).
pub const DEFAULT_TASKS: usize = 5;
/// Default number of terminals attached to one base station.
pub const DEFAULT_TERMINALS_PER_TASK: usize = 5;
/// Default self-regulation weight.
pub const DEFAULT_LAMBDA1: f64 = 1e-4;
/// Default multi-task regulation weight.
pub const DEFAULT_LAMBDA2: f64 = 1e-6;
/// Default loss smoothness parameter.
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Default duality-gap convergence target.
pub const DEFAULT_EPS_D: f64 = 0.01;
/// Default resource budget (single resource type).
pub const DEFAULT_BUDGET: f64 = 1400.0;
/// Default cost of one terminal iteration.
pub const DEFAULT_C_DEV: f64 = 0.1;
/// Default cost of one BS iteration.
pub const DEFAULT_C_BS: f64 = 10.0;
/// Default fixed terminal-iteration count used by the baselines.
pub const DEFAULT_FIXED_H: usize = 2;

/// Hyperparameters of the hierarchical training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemConfig {
    /// Number of tasks N (one per BS).
    pub n_tasks: usize,
    /// Terminals per task N_b (uniform across tasks).
    pub terminals_per_task: usize,
    /// Self-regulation weight, must be positive.
    pub lambda1: f64,
    /// Multi-task regulation weight, nonnegative.
    pub lambda2: f64,
    /// Loss smoothness parameter, positive.
    pub gamma: f64,
    /// Duality-gap target for declaring convergence.
    pub eps_d: f64,
    /// Number of server (cloud) iterations M.
    pub server_iterations: usize,
    /// Upper cap on BS iterations per server iteration when the budget
    /// would otherwise allow an unbounded count.
    pub k_cap: usize,
    /// Re-invoke the planner with the remaining budget at every server
    /// iteration boundary.
    pub replan: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n_tasks: DEFAULT_TASKS,
            terminals_per_task: DEFAULT_TERMINALS_PER_TASK,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            gamma: DEFAULT_GAMMA,
            eps_d: DEFAULT_EPS_D,
            server_iterations: 1,
            k_cap: 1000,
            replan: true,
        }
    }
}

impl SystemConfig {
    /// Validates parameter domains.
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::InvalidParameter("n_tasks must be >= 1".into()));
        }
        if self.terminals_per_task == 0 {
            return Err(Error::InvalidParameter(
                "terminals_per_task must be >= 1".into(),
            ));
        }
        if self.lambda1 <= 0.0 || !self.lambda1.is_finite() {
            return Err(Error::InvalidParameter("lambda1 must be > 0".into()));
        }
        if self.lambda2 < 0.0 || !self.lambda2.is_finite() {
            return Err(Error::InvalidParameter("lambda2 must be >= 0".into()));
        }
        if self.gamma <= 0.0 || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter("gamma must be > 0".into()));
        }
        if self.eps_d <= 0.0 || self.eps_d.is_nan() {
            return Err(Error::InvalidParameter("eps_d must be > 0".into()));
        }
        if self.server_iterations == 0 {
            return Err(Error::InvalidParameter(
                "server_iterations must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-resource-type iteration costs and budgets. Index j ranges over the
/// resource types; all three vectors share that length.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResourceCosts {
    /// Cost of one terminal iteration, per type.
    pub c_dev: Vec<f64>,
    /// Cost of one BS iteration, per type.
    pub c_bs: Vec<f64>,
    /// Total budget, per type. `f64::INFINITY` means unconstrained.
    pub budget: Vec<f64>,
}

impl Default for ResourceCosts {
    fn default() -> Self {
        ResourceCosts {
            c_dev: vec![DEFAULT_C_DEV],
            c_bs: vec![DEFAULT_C_BS],
            budget: vec![DEFAULT_BUDGET],
        }
    }
}

impl ResourceCosts {
    /// Single-resource-type costs.
    pub fn single(c_dev: f64, c_bs: f64, budget: f64) -> Self {
        ResourceCosts {
            c_dev: vec![c_dev],
            c_bs: vec![c_bs],
            budget: vec![budget],
        }
    }

    /// Number of resource types J.
    pub fn types(&self) -> usize {
        self.c_dev.len()
    }

    /// Validates lengths and sign constraints.
    pub fn validate(&self) -> Result<()> {
        if self.c_dev.is_empty()
            || self.c_dev.len() != self.c_bs.len()
            || self.c_dev.len() != self.budget.len()
        {
            return Err(Error::InvalidParameter(
                "resource cost vectors must be nonempty and of equal length".into(),
            ));
        }
        for v in self.c_dev.iter().chain(self.c_bs.iter()) {
            if *v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidParameter(
                    "iteration costs must be finite and nonnegative".into(),
                ));
            }
        }
        for b in &self.budget {
            if *b < 0.0 || b.is_nan() {
                return Err(Error::InvalidParameter(
                    "budgets must be nonnegative (infinity allowed)".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Convergence target: duality-gap threshold and server-iteration count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ConvergenceTarget {
    /// Target duality gap, must be positive.
    pub eps_d: f64,
    /// Server iterations M, at least 1.
    pub m: usize,
}

impl Default for ConvergenceTarget {
    fn default() -> Self {
        ConvergenceTarget {
            eps_d: DEFAULT_EPS_D,
            m: 1,
        }
    }
}
