//! Experiment orchestration: configuration, algorithm dispatch, the FedAVG
//! baseline, sweep driving and artifact persistence (CSV metrics plus a
//! JSON summary). Outputs contain no timestamps, so a fixed configuration
//! and seed reproduce identical bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ResourceCosts, SystemConfig, DEFAULT_FIXED_H};
use crate::data::{
    load_csv, partition, standardize_dataset, synth_tasks, FederatedDataset, SynthSpec,
};
use crate::engine::{accuracy, Engine, PlanMode, ReportSink, RoundReport, RunStatus, VecSink};
use crate::error::{Error, Result};
use crate::objective::{MarginLoss, SmoothLoss};
use crate::planner::{budget_ratio_k, round_cost, Regime, ResourcePlan, TaskStats};

/// Training algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Resource-aware hierarchical federated multi-task learning.
    Rhfedmtl,
    /// Fixed-H hierarchical federated multi-task learning.
    Hfedmtl,
    /// Single-model federated averaging.
    Fedavg,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Rhfedmtl => write!(f, "rhfedmtl"),
            Algorithm::Hfedmtl => write!(f, "hfedmtl"),
            Algorithm::Fedavg => write!(f, "fedavg"),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Algorithm> {
        match s.to_ascii_lowercase().as_str() {
            "rhfedmtl" => Ok(Algorithm::Rhfedmtl),
            "hfedmtl" => Ok(Algorithm::Hfedmtl),
            "fedavg" => Ok(Algorithm::Fedavg),
            other => Err(Error::InvalidParameter(format!(
                "unknown algorithm '{other}'"
            ))),
        }
    }
}

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// CSV ingestion with task and label columns.
    Csv {
        /// File path.
        path: PathBuf,
        /// Column holding the class label.
        label_column: String,
        /// Column grouping rows into tasks.
        task_column: String,
        /// Label value mapped to +1 (all others map to -1).
        positive_label: String,
        /// Fraction of each task's rows held out for testing.
        test_fraction: f64,
    },
    /// Synthetic related-task generator.
    Synth(SynthSpec),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthSpec::default())
    }
}

/// Full experiment description. Defaults reproduce the documented default
/// settings (five tasks of five terminals, gamma 1, lambda1 1e-4, lambda2
/// 1e-6, gap target 0.01, unit budget 1400 with BS cost 10 and terminal
/// cost 0.1, fixed H = 2 for the baselines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Algorithm to run.
    pub algorithm: Algorithm,
    /// Hierarchy and optimization parameters.
    pub system: SystemConfig,
    /// Resource costs and budgets.
    pub costs: ResourceCosts,
    /// Data source.
    pub data: DataSource,
    /// Root seed; fully determines the run together with the config.
    pub seed: u64,
    /// Terminal iterations for the fixed-H baselines.
    pub fixed_h: usize,
    /// FedAVG local gradient step size.
    pub learning_rate: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Rhfedmtl,
            system: SystemConfig::default(),
            costs: ResourceCosts::default(),
            data: DataSource::default(),
            seed: 7,
            fixed_h: DEFAULT_FIXED_H,
            learning_rate: 0.1,
        }
    }
}

impl ExperimentConfig {
    /// Materializes the dataset described by `data`.
    pub fn build_dataset(&self) -> Result<FederatedDataset> {
        match &self.data {
            DataSource::Csv {
                path,
                label_column,
                task_column,
                positive_label,
                test_fraction,
            } => {
                let raw = load_csv(path, label_column, task_column, positive_label)?;
                let mut data = partition(
                    &raw,
                    self.system.n_tasks,
                    self.system.terminals_per_task,
                    *test_fraction,
                    self.seed,
                )?;
                standardize_dataset(&mut data);
                Ok(data)
            }
            DataSource::Synth(spec) => Ok(synth_tasks(
                self.system.n_tasks,
                self.system.terminals_per_task,
                spec,
                self.seed,
            )?
            .data),
        }
    }
}

/// Everything a finished run reports, minus the per-round metrics table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifact {
    /// Configuration echo.
    pub config: ExperimentConfig,
    /// Plans used (one per server iteration that planned).
    pub plans: Vec<ResourcePlan>,
    /// Termination cause.
    pub status: RunStatus,
    /// Completed BS sweeps.
    pub bs_sweeps: usize,
    /// Final consumption per resource type.
    pub consumed: Vec<f64>,
    /// Final test accuracy per task.
    pub per_task_accuracy: Vec<f64>,
    /// Mean of the per-task accuracies.
    pub mean_accuracy: f64,
    /// Final mean duality gap (absent for FedAVG, which has no dual).
    pub final_gap: Option<f64>,
    /// Content hash of the dataset.
    pub dataset_fingerprint: String,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs one experiment; when `out_dir` is given, writes `metrics.csv` and
/// `summary.json` into it atomically.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<(RunArtifact, Vec<RoundReport>)> {
    config.system.validate()?;
    config.costs.validate()?;
    let dataset = config.build_dataset()?;
    let fingerprint = dataset.fingerprint();

    let (summary_status, bs_sweeps, consumed, per_task_accuracy, final_gap, plans, reports) =
        match config.algorithm {
            Algorithm::Rhfedmtl | Algorithm::Hfedmtl => {
                let engine = Engine::new(&config.system, &config.costs, &dataset)?;
                let mode = match config.algorithm {
                    Algorithm::Rhfedmtl => PlanMode::Planner,
                    _ => PlanMode::FixedH(config.fixed_h),
                };
                let mut sink = VecSink::default();
                let summary = engine.run(mode, config.seed, &mut sink)?;
                let gap = if summary.final_gap.is_nan() {
                    None
                } else {
                    Some(summary.final_gap)
                };
                (
                    summary.status,
                    summary.bs_sweeps,
                    summary.consumed,
                    summary.per_task_accuracy,
                    gap,
                    summary.plans,
                    sink.reports,
                )
            }
            Algorithm::Fedavg => {
                let mut sink = VecSink::default();
                let out = run_fedavg(config, &dataset, &mut sink)?;
                (
                    out.status,
                    out.bs_sweeps,
                    out.consumed,
                    out.per_task_accuracy,
                    None,
                    vec![out.plan],
                    sink.reports,
                )
            }
        };

    let mean_accuracy = mean(&per_task_accuracy);
    let artifact = RunArtifact {
        config: config.clone(),
        plans,
        status: summary_status,
        bs_sweeps,
        consumed,
        per_task_accuracy,
        mean_accuracy,
        final_gap,
        dataset_fingerprint: fingerprint,
    };
    if let Some(dir) = out_dir {
        write_artifact(dir, &artifact, &reports)?;
    }
    Ok((artifact, reports))
}

struct FedAvgOutcome {
    status: RunStatus,
    bs_sweeps: usize,
    consumed: Vec<f64>,
    per_task_accuracy: Vec<f64>,
    plan: ResourcePlan,
}

/// Single-model federated averaging over all tasks and terminals: each
/// round, every terminal takes `fixed_h` full-gradient steps on its local
/// regularized loss from the shared weights, and the server averages the
/// results weighted by sample count. One round is charged like one BS
/// sweep of the hierarchical methods, which makes budgets comparable.
fn run_fedavg(
    config: &ExperimentConfig,
    dataset: &FederatedDataset,
    sink: &mut dyn ReportSink,
) -> Result<FedAvgOutcome> {
    let loss = SmoothLoss::new(config.system.gamma)?;
    let dim = dataset.dim;
    let h = config.fixed_h;
    let lr = config.learning_rate;
    let lambda1 = config.system.lambda1;

    let stats: Vec<TaskStats> = (0..dataset.tasks.len())
        .map(|b| TaskStats::of_task(dataset, b, 0.0))
        .collect();
    let h_vec = vec![h; stats.len()];
    let m_total = config.system.server_iterations;
    let k = budget_ratio_k(&h_vec, &config.costs, &stats, m_total)
        .min(config.system.k_cap)
        .max(1);
    let projected: Vec<f64> = (0..config.costs.types())
        .map(|j| m_total as f64 * k as f64 * round_cost(&h_vec, &stats, &config.costs, j))
        .collect();
    let plan = ResourcePlan {
        h_per_task: h_vec.clone(),
        k,
        projected_cost: projected.clone(),
        feasible: projected
            .iter()
            .zip(&config.costs.budget)
            .all(|(p, b)| p <= b),
        regime: Regime::BudgetCrossing,
        binding: None,
    };

    let total_samples: usize = dataset.tasks.iter().map(|t| t.n_b()).sum();
    let mut w = vec![0.0f64; dim];
    let mut consumed = vec![0.0; config.costs.types()];
    let mut status = RunStatus::IterationsComplete;
    let mut sweeps = 0usize;

    'outer: for m in 1..=m_total {
        for kk in 1..=k {
            let mut sweep_cost = vec![0.0; config.costs.types()];
            for td in &dataset.tasks {
                for (j, cost) in sweep_cost.iter_mut().enumerate() {
                    *cost += config.costs.c_bs[j]
                        + td.terminals() as f64 * h as f64 * config.costs.c_dev[j];
                }
            }
            let affordable = sweep_cost
                .iter()
                .zip(&config.costs.budget)
                .zip(&consumed)
                .all(|((cost, budget), used)| used + cost <= budget + 1e-9);
            if !affordable {
                status = RunStatus::BudgetExhausted;
                break 'outer;
            }

            // Local full-gradient descent per terminal, from the shared w.
            let mut averaged = vec![0.0f64; dim];
            for td in &dataset.tasks {
                for shard in &td.shards {
                    let mut local = w.clone();
                    for _ in 0..h {
                        let mut grad = vec![0.0f64; dim];
                        for s in shard.samples() {
                            let margin = s.label
                                * local
                                    .iter()
                                    .zip(&s.features)
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            let slope = loss.derivative(margin) * s.label;
                            for (g, x) in grad.iter_mut().zip(&s.features) {
                                *g += slope * x / shard.len() as f64;
                            }
                        }
                        for (g, wj) in grad.iter_mut().zip(&local) {
                            *g += lambda1 * wj;
                        }
                        for (wj, g) in local.iter_mut().zip(&grad) {
                            *wj -= lr * g;
                        }
                    }
                    let weight = shard.len() as f64 / total_samples as f64;
                    for (a, l) in averaged.iter_mut().zip(&local) {
                        *a += weight * l;
                    }
                }
            }
            w = averaged;
            for (c, s) in consumed.iter_mut().zip(&sweep_cost) {
                *c += s;
            }
            sweeps += 1;

            for (b, td) in dataset.tasks.iter().enumerate() {
                // No dual exists for this baseline; report the shared
                // model's per-task regularized loss and accuracy only.
                let mut loss_sum = 0.0;
                for s in td.train_iter() {
                    let margin =
                        s.label * w.iter().zip(&s.features).map(|(a, b)| a * b).sum::<f64>();
                    loss_sum += loss.value(margin);
                }
                let primal = loss_sum / td.n_b() as f64
                    + lambda1 / 2.0 * w.iter().map(|x| x * x).sum::<f64>();
                sink.record(RoundReport {
                    m,
                    b,
                    k: kk,
                    dual: f64::NAN,
                    primal,
                    gap: f64::NAN,
                    accuracy: accuracy(&w, &td.test),
                    consumed: consumed.clone(),
                });
            }
        }
    }

    let per_task_accuracy = dataset
        .tasks
        .iter()
        .map(|td| accuracy(&w, &td.test))
        .collect();
    Ok(FedAvgOutcome {
        status,
        bs_sweeps: sweeps,
        consumed,
        per_task_accuracy,
        plan,
    })
}

/// Writes `metrics.csv` and `summary.json` into `dir`, creating it first;
/// both files land via a temporary name and an atomic rename. Rows are
/// sorted into canonical (m, b, k) order regardless of execution
/// interleaving; the consumed columns remain cumulative in execution order.
pub fn write_artifact(dir: &Path, artifact: &RunArtifact, reports: &[RoundReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let types = artifact.consumed.len();
    let mut ordered: Vec<&RoundReport> = reports.iter().collect();
    ordered.sort_by_key(|r| (r.m, r.b, r.k));

    let tmp = dir.join(".metrics.csv.tmp");
    {
        let mut wtr = csv::Writer::from_path(&tmp)?;
        let mut header: Vec<String> = ["m", "b", "k", "dual", "primal", "gap", "accuracy"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for j in 0..types {
            header.push(format!("consumed_{j}"));
        }
        wtr.write_record(&header)?;
        for r in ordered {
            let mut rec: Vec<String> = vec![
                r.m.to_string(),
                r.b.to_string(),
                r.k.to_string(),
                format_float(r.dual),
                format_float(r.primal),
                format_float(r.gap),
                format_float(r.accuracy),
            ];
            for c in &r.consumed {
                rec.push(format_float(*c));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
    }
    std::fs::rename(&tmp, dir.join("metrics.csv"))?;

    let tmp = dir.join(".summary.json.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        let body = serde_json::to_string_pretty(artifact)
            .map_err(|e| Error::Data(format!("summary serialization: {e}")))?;
        f.write_all(body.as_bytes())?;
        f.write_all(b"\n")?;
    }
    std::fs::rename(&tmp, dir.join("summary.json"))?;
    Ok(())
}

fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.12e}")
    }
}

/// Sweep axis selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Total budget per resource type.
    Budget,
    /// Terminals per task.
    TerminalsPerTask,
    /// Number of tasks.
    Tasks,
    /// Terminal iteration cost.
    CDev,
    /// Self-regulation weight.
    Lambda1,
    /// Multi-task regulation weight.
    Lambda2,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<SweepAxis> {
        match s.to_ascii_lowercase().as_str() {
            "budget" => Ok(SweepAxis::Budget),
            "n_b" | "terminals" | "terminals_per_task" => Ok(SweepAxis::TerminalsPerTask),
            "n" | "tasks" => Ok(SweepAxis::Tasks),
            "c_dev" => Ok(SweepAxis::CDev),
            "lambda1" => Ok(SweepAxis::Lambda1),
            "lambda2" => Ok(SweepAxis::Lambda2),
            other => Err(Error::InvalidParameter(format!(
                "unknown sweep axis '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SweepAxis::Budget => "budget",
            SweepAxis::TerminalsPerTask => "terminals_per_task",
            SweepAxis::Tasks => "tasks",
            SweepAxis::CDev => "c_dev",
            SweepAxis::Lambda1 => "lambda1",
            SweepAxis::Lambda2 => "lambda2",
        };
        write!(f, "{name}")
    }
}

/// Applies one axis value to a configuration copy.
pub fn apply_axis(config: &ExperimentConfig, axis: SweepAxis, value: f64) -> ExperimentConfig {
    let mut c = config.clone();
    match axis {
        SweepAxis::Budget => {
            for b in &mut c.costs.budget {
                *b = value;
            }
        }
        SweepAxis::TerminalsPerTask => c.system.terminals_per_task = value as usize,
        SweepAxis::Tasks => c.system.n_tasks = value as usize,
        SweepAxis::CDev => {
            for d in &mut c.costs.c_dev {
                *d = value;
            }
        }
        SweepAxis::Lambda1 => c.system.lambda1 = value,
        SweepAxis::Lambda2 => c.system.lambda2 = value,
    }
    c
}

/// One sweep cell result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    /// Axis that varied.
    pub axis: String,
    /// Axis value for this run.
    pub value: f64,
    /// Algorithm used.
    pub algorithm: String,
    /// Seed used.
    pub seed: u64,
    /// Mean test accuracy.
    pub mean_accuracy: f64,
    /// Consumption of the first resource type.
    pub consumed: f64,
    /// Whether the run converged to the gap target.
    pub converged: bool,
    /// Chosen terminal iterations (first task).
    pub h: usize,
    /// Chosen BS iterations of the first plan.
    pub k: usize,
    /// Whether the plan was feasible.
    pub feasible: bool,
}

/// Aggregate of one (value, algorithm) sweep cell over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepAggregate {
    /// Axis that varied.
    pub axis: String,
    /// Axis value.
    pub value: f64,
    /// Algorithm.
    pub algorithm: String,
    /// Seeds aggregated.
    pub seeds: usize,
    /// Mean of mean accuracies.
    pub accuracy_mean: f64,
    /// Standard deviation of mean accuracies.
    pub accuracy_std: f64,
}

/// Runs `config` across every (axis value, seed) pair, for each algorithm
/// in `algorithms`, returning long-format rows plus per-cell aggregates.
pub fn sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    algorithms: &[Algorithm],
) -> Result<(Vec<SweepRow>, Vec<SweepAggregate>)> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs at least one value".into(),
        ));
    }
    if seeds.is_empty() || algorithms.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs at least one seed and one algorithm".into(),
        ));
    }
    let mut rows = Vec::new();
    for &value in values {
        for &algorithm in algorithms {
            for &seed in seeds {
                let mut c = apply_axis(config, axis, value);
                c.algorithm = algorithm;
                c.seed = seed;
                let (artifact, _) = run_experiment(&c, None)?;
                let plan = artifact.plans.first();
                rows.push(SweepRow {
                    axis: axis.to_string(),
                    value,
                    algorithm: algorithm.to_string(),
                    seed,
                    mean_accuracy: artifact.mean_accuracy,
                    consumed: artifact.consumed.first().copied().unwrap_or(0.0),
                    converged: artifact.status == RunStatus::Converged,
                    h: plan.map(|p| p.h_per_task[0]).unwrap_or(0),
                    k: plan.map(|p| p.k).unwrap_or(0),
                    feasible: plan.map(|p| p.feasible).unwrap_or(false),
                });
            }
        }
    }
    let mut aggregates = Vec::new();
    for &value in values {
        for &algorithm in algorithms {
            let cell: Vec<f64> = rows
                .iter()
                .filter(|r| r.value == value && r.algorithm == algorithm.to_string())
                .map(|r| r.mean_accuracy)
                .collect();
            let m = mean(&cell);
            let var = if cell.len() > 1 {
                cell.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (cell.len() - 1) as f64
            } else {
                0.0
            };
            aggregates.push(SweepAggregate {
                axis: axis.to_string(),
                value,
                algorithm: algorithm.to_string(),
                seeds: cell.len(),
                accuracy_mean: m,
                accuracy_std: var.sqrt(),
            });
        }
    }
    Ok((rows, aggregates))
}

/// Writes sweep rows and aggregates as CSV files into `dir`.
pub fn write_sweep(dir: &Path, rows: &[SweepRow], aggregates: &[SweepAggregate]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(".runs.csv.tmp");
    {
        let mut wtr = csv::Writer::from_path(&tmp)?;
        wtr.write_record([
            "axis",
            "value",
            "algorithm",
            "seed",
            "mean_accuracy",
            "consumed",
            "converged",
            "h",
            "k",
            "feasible",
        ])?;
        for r in rows {
            wtr.write_record([
                r.axis.clone(),
                format_float(r.value),
                r.algorithm.clone(),
                r.seed.to_string(),
                format_float(r.mean_accuracy),
                format_float(r.consumed),
                r.converged.to_string(),
                r.h.to_string(),
                r.k.to_string(),
                r.feasible.to_string(),
            ])?;
        }
        wtr.flush()?;
    }
    std::fs::rename(&tmp, dir.join("runs.csv"))?;

    let tmp = dir.join(".aggregate.csv.tmp");
    {
        let mut wtr = csv::Writer::from_path(&tmp)?;
        wtr.write_record([
            "axis",
            "value",
            "algorithm",
            "seeds",
            "accuracy_mean",
            "accuracy_std",
        ])?;
        for a in aggregates {
            wtr.write_record([
                a.axis.clone(),
                format_float(a.value),
                a.algorithm.clone(),
                a.seeds.to_string(),
                format_float(a.accuracy_mean),
                format_float(a.accuracy_std),
            ])?;
        }
        wtr.flush()?;
    }
    std::fs::rename(&tmp, dir.join("aggregate.csv"))?;
    Ok(())
}

/// Emits a dataset as CSV in the shape `load_csv` ingests: a task column,
/// feature columns and a label column, train and test rows pooled.
pub fn write_dataset_csv(path: &Path, data: &FederatedDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["task".to_string()];
    for j in 0..data.dim {
        header.push(format!("f{j}"));
    }
    header.push("label".to_string());
    wtr.write_record(&header)?;
    for td in &data.tasks {
        let rows = td.train_iter().chain(td.test.iter());
        for s in rows {
            let mut rec = vec![format!("t{:03}", td.index)];
            for x in &s.features {
                rec.push(format_float(*x));
            }
            rec.push(if s.label > 0.0 { "pos" } else { "neg" }.to_string());
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
