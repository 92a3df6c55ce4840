//! Command-line front end: `run` one experiment, `sweep` an axis, `plan` a
//! resource plan without training, `synth` a dataset to CSV.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 infeasible plan
//! under `--strict`.

use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use rhfedmtl_core::config::{ConvergenceTarget, ResourceCosts};
use rhfedmtl_core::data::SynthSpec;
use rhfedmtl_core::harness::{
    run_experiment, sweep, write_dataset_csv, write_sweep, Algorithm, DataSource, ExperimentConfig,
    SweepAxis,
};
use rhfedmtl_core::planner::{
    projected_cost, required_bs_iterations, required_bs_iterations_real,
    required_bs_iterations_real_alt, round_cost, select_plan, theta, theta_ln, Regime, TaskStats,
};

#[derive(Parser)]
#[command(
    name = "rhfedmtl",
    version,
    about = "Resource-aware hierarchical federated multi-task learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv + summary.json.
    Run(RunArgs),
    /// Run a sweep over one axis and write runs.csv + aggregate.csv.
    Sweep(SweepArgs),
    /// Compute a resource plan without training; optionally emit the
    /// projected-cost table over terminal-iteration counts.
    Plan(PlanArgs),
    /// Generate a synthetic dataset and write it as ingestible CSV.
    Synth(SynthArgs),
}

/// Flags shared by `run` and `sweep`. Precedence: built-in defaults, then
/// these flags, then the config file (the file wins).
#[derive(Args, Debug, Clone)]
struct ExperimentArgs {
    /// Algorithm: rhfedmtl | hfedmtl | fedavg.
    #[arg(long)]
    algorithm: Option<String>,
    /// Number of tasks (BSs).
    #[arg(long)]
    n_tasks: Option<usize>,
    /// Terminals per task.
    #[arg(long)]
    terminals_per_task: Option<usize>,
    /// Self-regulation weight.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Multi-task regulation weight.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Loss smoothness parameter.
    #[arg(long)]
    gamma: Option<f64>,
    /// Duality-gap convergence target.
    #[arg(long)]
    eps_d: Option<f64>,
    /// Server iterations M.
    #[arg(long)]
    server_iterations: Option<usize>,
    /// Cap on BS iterations per server iteration.
    #[arg(long)]
    k_cap: Option<usize>,
    /// Disable re-planning at server-iteration boundaries.
    #[arg(long)]
    no_replan: bool,
    /// Resource budget (single resource type).
    #[arg(long)]
    budget: Option<f64>,
    /// Cost of one terminal iteration.
    #[arg(long)]
    c_dev: Option<f64>,
    /// Cost of one BS iteration.
    #[arg(long)]
    c_bs: Option<f64>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed terminal iterations for the baselines.
    #[arg(long)]
    fixed_h: Option<usize>,
    /// FedAVG learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// CSV dataset path (switches the data source to CSV).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Label column name for CSV data.
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Task column name for CSV data.
    #[arg(long, default_value = "task")]
    task_column: String,
    /// Label value mapped to +1.
    #[arg(long, default_value = "pos")]
    positive_label: String,
    /// Test fraction for CSV data.
    #[arg(long, default_value_t = 2.0 / 7.0)]
    test_fraction: f64,
    /// Synthetic training samples per task.
    #[arg(long)]
    train_per_task: Option<usize>,
    /// Synthetic test samples per task.
    #[arg(long)]
    test_per_task: Option<usize>,
    /// Synthetic feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Synthetic task relatedness in [0, 1].
    #[arg(long)]
    relatedness: Option<f64>,
    /// Synthetic label-flip probability.
    #[arg(long)]
    noise: Option<f64>,
    /// TOML config file; its values override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit with code 3 when the selected plan is infeasible.
    #[arg(long)]
    strict: bool,
}

/// Partial configuration accepted from a TOML file; any present field
/// overrides the corresponding flag or default.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    algorithm: Option<String>,
    n_tasks: Option<usize>,
    terminals_per_task: Option<usize>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    gamma: Option<f64>,
    eps_d: Option<f64>,
    server_iterations: Option<usize>,
    k_cap: Option<usize>,
    replan: Option<bool>,
    budget: Option<f64>,
    c_dev: Option<f64>,
    c_bs: Option<f64>,
    seed: Option<u64>,
    fixed_h: Option<usize>,
    learning_rate: Option<f64>,
    csv: Option<PathBuf>,
    label_column: Option<String>,
    task_column: Option<String>,
    positive_label: Option<String>,
    test_fraction: Option<f64>,
    train_per_task: Option<usize>,
    test_per_task: Option<usize>,
    dim: Option<usize>,
    relatedness: Option<f64>,
    noise: Option<f64>,
}

impl ExperimentArgs {
    fn build(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = ExperimentConfig::default();

        if let Some(a) = &self.algorithm {
            c.algorithm = a.parse::<Algorithm>().map_err(|e| anyhow!("{e}"))?;
        }
        if let Some(v) = self.n_tasks {
            c.system.n_tasks = v;
        }
        if let Some(v) = self.terminals_per_task {
            c.system.terminals_per_task = v;
        }
        if let Some(v) = self.lambda1 {
            c.system.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            c.system.lambda2 = v;
        }
        if let Some(v) = self.gamma {
            c.system.gamma = v;
        }
        if let Some(v) = self.eps_d {
            c.system.eps_d = v;
        }
        if let Some(v) = self.server_iterations {
            c.system.server_iterations = v;
        }
        if let Some(v) = self.k_cap {
            c.system.k_cap = v;
        }
        if self.no_replan {
            c.system.replan = false;
        }
        if let Some(v) = self.budget {
            c.costs.budget = vec![v];
        }
        if let Some(v) = self.c_dev {
            c.costs.c_dev = vec![v];
        }
        if let Some(v) = self.c_bs {
            c.costs.c_bs = vec![v];
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.fixed_h {
            c.fixed_h = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(path) = &self.csv {
            c.data = DataSource::Csv {
                path: path.clone(),
                label_column: self.label_column.clone(),
                task_column: self.task_column.clone(),
                positive_label: self.positive_label.clone(),
                test_fraction: self.test_fraction,
            };
        } else {
            let mut spec = SynthSpec::default();
            if let Some(v) = self.train_per_task {
                spec.train_per_task = v;
            }
            if let Some(v) = self.test_per_task {
                spec.test_per_task = v;
            }
            if let Some(v) = self.dim {
                spec.dim = v;
            }
            if let Some(v) = self.relatedness {
                spec.relatedness = v;
            }
            if let Some(v) = self.noise {
                spec.noise = v;
            }
            c.data = DataSource::Synth(spec);
        }

        if let Some(path) = &self.config {
            let body = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            let file: FileConfig = toml::from_str(&body)
                .with_context(|| format!("parsing config file {}", path.display()))?;
            if let Some(a) = file.algorithm {
                c.algorithm = a.parse::<Algorithm>().map_err(|e| anyhow!("{e}"))?;
            }
            if let Some(v) = file.n_tasks {
                c.system.n_tasks = v;
            }
            if let Some(v) = file.terminals_per_task {
                c.system.terminals_per_task = v;
            }
            if let Some(v) = file.lambda1 {
                c.system.lambda1 = v;
            }
            if let Some(v) = file.lambda2 {
                c.system.lambda2 = v;
            }
            if let Some(v) = file.gamma {
                c.system.gamma = v;
            }
            if let Some(v) = file.eps_d {
                c.system.eps_d = v;
            }
            if let Some(v) = file.server_iterations {
                c.system.server_iterations = v;
            }
            if let Some(v) = file.k_cap {
                c.system.k_cap = v;
            }
            if let Some(v) = file.replan {
                c.system.replan = v;
            }
            if let Some(v) = file.budget {
                c.costs.budget = vec![v];
            }
            if let Some(v) = file.c_dev {
                c.costs.c_dev = vec![v];
            }
            if let Some(v) = file.c_bs {
                c.costs.c_bs = vec![v];
            }
            if let Some(v) = file.seed {
                c.seed = v;
            }
            if let Some(v) = file.fixed_h {
                c.fixed_h = v;
            }
            if let Some(v) = file.learning_rate {
                c.learning_rate = v;
            }
            let file_synth = file.train_per_task.is_some()
                || file.test_per_task.is_some()
                || file.dim.is_some()
                || file.relatedness.is_some()
                || file.noise.is_some();
            if let Some(path) = file.csv {
                c.data = DataSource::Csv {
                    path,
                    label_column: file
                        .label_column
                        .unwrap_or_else(|| self.label_column.clone()),
                    task_column: file.task_column.unwrap_or_else(|| self.task_column.clone()),
                    positive_label: file
                        .positive_label
                        .unwrap_or_else(|| self.positive_label.clone()),
                    test_fraction: file.test_fraction.unwrap_or(self.test_fraction),
                };
            } else if file_synth {
                let mut spec = match &c.data {
                    DataSource::Synth(s) => s.clone(),
                    _ => SynthSpec::default(),
                };
                if let Some(v) = file.train_per_task {
                    spec.train_per_task = v;
                }
                if let Some(v) = file.test_per_task {
                    spec.test_per_task = v;
                }
                if let Some(v) = file.dim {
                    spec.dim = v;
                }
                if let Some(v) = file.relatedness {
                    spec.relatedness = v;
                }
                if let Some(v) = file.noise {
                    spec.noise = v;
                }
                c.data = DataSource::Synth(spec);
            }
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Output directory for metrics.csv and summary.json.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Axis: budget | terminals_per_task | tasks | c_dev | lambda1 | lambda2.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Comma-separated seeds (default: the single configured seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated algorithms to compare.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    /// Output directory for runs.csv and aggregate.csv.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Number of tasks.
    #[arg(long, default_value_t = 5)]
    n_tasks: usize,
    /// Terminals per task.
    #[arg(long, default_value_t = 5)]
    terminals_per_task: usize,
    /// Training samples per task assumed by the dry run.
    #[arg(long, default_value_t = 350)]
    n_per_task: usize,
    /// Largest terminal shard size assumed by the dry run.
    #[arg(long, default_value_t = 70)]
    max_shard: usize,
    /// Interference constant; 0 assumes no cross-terminal interference.
    /// Supply a dataset-derived value for data-aware planning.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Self-regulation weight.
    #[arg(long, default_value_t = 1e-4)]
    lambda1: f64,
    /// Multi-task regulation weight.
    #[arg(long, default_value_t = 1e-6)]
    lambda2: f64,
    /// Loss smoothness parameter.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Duality-gap target.
    #[arg(long, default_value_t = 0.01)]
    eps_d: f64,
    /// Server iterations M.
    #[arg(long, default_value_t = 1)]
    server_iterations: usize,
    /// Resource budget.
    #[arg(long, default_value_t = 1400.0, allow_hyphen_values = true)]
    budget: f64,
    /// Cost of one terminal iteration.
    #[arg(long, default_value_t = 0.1)]
    c_dev: f64,
    /// Cost of one BS iteration.
    #[arg(long, default_value_t = 10.0)]
    c_bs: f64,
    /// Largest terminal-iteration count considered.
    #[arg(long, default_value_t = 70)]
    h_max: usize,
    /// Cap on BS iterations in the surplus regime.
    #[arg(long, default_value_t = 1000)]
    k_cap: usize,
    /// Step-quality constant form: theorem (default) or proof.
    #[arg(long, default_value = "theorem")]
    eta_variant: String,
    /// Print the per-H table (h, theta, k bound, projected cost, spend).
    #[arg(long)]
    table: bool,
    /// Write the table to this CSV file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with code 3 when the plan is infeasible.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Number of tasks.
    #[arg(long, default_value_t = 5)]
    n_tasks: usize,
    /// Terminals per task.
    #[arg(long, default_value_t = 5)]
    terminals_per_task: usize,
    /// Training samples per task.
    #[arg(long, default_value_t = 50)]
    train_per_task: usize,
    /// Test samples per task.
    #[arg(long, default_value_t = 20)]
    test_per_task: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 10)]
    dim: usize,
    /// Task relatedness in [0, 1].
    #[arg(long, default_value_t = 0.7)]
    relatedness: f64,
    /// Label-flip probability.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Root seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<i32> {
    let config = args.experiment.build()?;
    let (artifact, _) = run_experiment(&config, Some(&args.out_dir))?;
    if args.experiment.strict {
        if let Some(plan) = artifact.plans.first() {
            if !plan.feasible {
                eprintln!("plan infeasible under strict mode");
                return Ok(3);
            }
        }
    }
    println!(
        "algorithm={} status={:?} sweeps={} mean_accuracy={:.4} consumed={:.2} gap={}",
        artifact.config.algorithm,
        artifact.status,
        artifact.bs_sweeps,
        artifact.mean_accuracy,
        artifact.consumed.first().copied().unwrap_or(0.0),
        artifact
            .final_gap
            .map(|g| format!("{g:.6}"))
            .unwrap_or_else(|| "n/a".into()),
    );
    println!("artifacts written to {}", args.out_dir.display());
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<i32> {
    let config = args.experiment.build()?;
    let axis: SweepAxis = args.axis.parse().map_err(|e| anyhow!("{e}"))?;
    let seeds = args.seeds.unwrap_or_else(|| vec![config.seed]);
    let algorithms = match args.algorithms {
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Algorithm>().map_err(|e| anyhow!("{e}")))
            .collect::<anyhow::Result<Vec<_>>>()?,
        None => vec![config.algorithm],
    };
    let (rows, aggregates) = sweep(&config, axis, &args.values, &seeds, &algorithms)?;
    write_sweep(&args.out_dir, &rows, &aggregates)?;
    if args.experiment.strict && rows.iter().any(|r| !r.feasible) {
        eprintln!("at least one sweep point was infeasible under strict mode");
        return Ok(3);
    }
    println!(
        "swept {} over {} values x {} seeds x {} algorithms -> {}",
        axis,
        args.values.len(),
        seeds.len(),
        algorithms.len(),
        args.out_dir.display()
    );
    Ok(0)
}

fn cmd_plan(args: PlanArgs) -> anyhow::Result<i32> {
    let stats = vec![
        TaskStats {
            n_b: args.n_per_task,
            n_tilde: args.max_shard,
            terminals: args.terminals_per_task,
            sigma: args.sigma,
        };
        args.n_tasks
    ];
    let costs = ResourceCosts::single(args.c_dev, args.c_bs, args.budget);
    let target = ConvergenceTarget {
        eps_d: args.eps_d,
        m: args.server_iterations,
    };
    let variant = match args.eta_variant.as_str() {
        "theorem" => rhfedmtl_core::planner::EtaVariant::Theorem,
        "proof" => rhfedmtl_core::planner::EtaVariant::Proof,
        other => return Err(anyhow!("unknown eta variant '{other}'")),
    };
    let eta_star = rhfedmtl_core::planner::eta(
        args.n_per_task,
        args.sigma,
        args.gamma,
        args.lambda1,
        args.lambda2,
        variant,
    );
    let t_star = args.terminals_per_task;
    let plan = select_plan(
        &costs,
        &target,
        &stats,
        args.gamma,
        args.lambda1,
        args.lambda2,
        eta_star,
        t_star,
        args.h_max,
        args.k_cap,
    )?;
    let regime = match plan.regime {
        Regime::BudgetShort => "budget-short",
        Regime::BudgetCrossing => "budget-crossing",
        Regime::Surplus => "surplus",
    };
    println!(
        "regime={} H={} K={} projected={:.4} feasible={} binding={:?}",
        regime, plan.h_per_task[0], plan.k, plan.projected_cost[0], plan.feasible, plan.binding
    );

    if args.table || args.out.is_some() {
        let n_list: Vec<usize> = stats.iter().map(|s| s.n_b).collect();
        let mut lines = Vec::with_capacity(args.h_max + 1);
        lines.push("h,theta,theta_ln,k_bound,f,spend".to_string());
        for h in 1..=args.h_max {
            let th = theta(
                h,
                args.n_per_task,
                args.max_shard,
                args.gamma,
                args.lambda1,
                args.lambda2,
            );
            let th_ln = theta_ln(
                h,
                args.n_per_task,
                args.max_shard,
                args.gamma,
                args.lambda1,
                args.lambda2,
            );
            let k = required_bs_iterations(th, eta_star, t_star, &n_list, args.eps_d);
            // Cross-check the two evaluation routes at print time.
            let a = required_bs_iterations_real(th, eta_star, t_star, &n_list, args.eps_d);
            let b = required_bs_iterations_real_alt(th_ln, eta_star, t_star, &n_list, args.eps_d);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(anyhow!("evaluation routes disagree at h={h}: {a} vs {b}"));
            }
            let f = projected_cost(
                h,
                &costs,
                &target,
                &stats,
                args.gamma,
                args.lambda1,
                args.lambda2,
                eta_star,
                t_star,
                0,
            );
            let h_vec = vec![h; stats.len()];
            let spend = target.m as f64 * k as f64 * round_cost(&h_vec, &stats, &costs, 0);
            lines.push(format!(
                "{h},{th:.15e},{th_ln:.15e},{k},{f:.15e},{spend:.15e}"
            ));
        }
        let body = lines.join("\n") + "\n";
        match &args.out {
            Some(path) => std::fs::write(path, body)
                .with_context(|| format!("writing table to {}", path.display()))?,
            None => print!("{body}"),
        }
    }
    if args.strict && !plan.feasible {
        eprintln!("plan infeasible under strict mode");
        return Ok(3);
    }
    Ok(0)
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<i32> {
    let spec = SynthSpec {
        train_per_task: args.train_per_task,
        test_per_task: args.test_per_task,
        dim: args.dim,
        relatedness: args.relatedness,
        noise: args.noise,
    };
    let out =
        rhfedmtl_core::data::synth_tasks(args.n_tasks, args.terminals_per_task, &spec, args.seed)?;
    write_dataset_csv(&args.out, &out.data)?;
    println!(
        "wrote {} tasks x ({} train + {} test) samples, dim {} -> {}",
        args.n_tasks,
        args.train_per_task,
        args.test_per_task,
        args.dim,
        args.out.display()
    );
    Ok(0)
}
