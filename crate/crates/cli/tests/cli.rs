//! Command-line contract: exit codes, output files, config-file precedence
//! and the synthetic-data round trip.

use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rhfedmtl"))
}

#[test]
fn usage_error_exits_one() {
    let out = binary().arg("run").arg("--no-such-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = binary().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = binary().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn runtime_error_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args(["run", "--csv", "/nonexistent/data.csv", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("error"), "stderr: {msg}");
}

#[test]
fn strict_infeasible_run_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args([
            "run",
            "--budget",
            "50",
            "--n-tasks",
            "2",
            "--terminals-per-task",
            "2",
            "--train-per-task",
            "12",
            "--test-per-task",
            "4",
            "--dim",
            "3",
            "--lambda1",
            "1.0",
            "--strict",
            "--out-dir",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args([
            "run",
            "--n-tasks",
            "2",
            "--terminals-per-task",
            "2",
            "--lambda1",
            "1.0",
            "--train-per-task",
            "12",
            "--test-per-task",
            "6",
            "--dim",
            "4",
            "--server-iterations",
            "2",
            "--out-dir",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "m,b,k,dual,primal,gap,accuracy,consumed_0"
    );
    assert!(lines.next().is_some(), "metrics should have data rows");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["config"]["algorithm"], "rhfedmtl");
    let per_task = summary["per_task_accuracy"].as_array().unwrap();
    assert_eq!(per_task.len(), 2);
    let mean: f64 = summary["mean_accuracy"].as_f64().unwrap();
    let avg = per_task.iter().map(|v| v.as_f64().unwrap()).sum::<f64>() / 2.0;
    assert!((mean - avg).abs() < 1e-12);
    assert!(summary["dataset_fingerprint"].as_str().unwrap().len() == 64);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.toml");
    std::fs::write(
        &config_path,
        "seed = 123\nlambda1 = 0.5\nalgorithm = \"hfedmtl\"\n",
    )
    .unwrap();
    let out = binary()
        .args([
            "run",
            "--seed",
            "7",
            "--lambda1",
            "2.0",
            "--algorithm",
            "rhfedmtl",
            "--n-tasks",
            "2",
            "--terminals-per-task",
            "2",
            "--train-per-task",
            "12",
            "--test-per-task",
            "4",
            "--dim",
            "3",
            "--config",
        ])
        .arg(&config_path)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    // The file wins over the flags.
    assert_eq!(summary["config"]["seed"], 123);
    assert_eq!(summary["config"]["system"]["lambda1"], 0.5);
    assert_eq!(summary["config"]["algorithm"], "hfedmtl");
}

#[test]
fn config_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.toml");
    std::fs::write(&config_path, "lambda3 = 1.0\n").unwrap();
    let out = binary()
        .args(["run", "--config"])
        .arg(&config_path)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_roundtrips_through_csv_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("data.csv");
    let out = binary()
        .args([
            "synth",
            "--n-tasks",
            "3",
            "--terminals-per-task",
            "2",
            "--train-per-task",
            "21",
            "--test-per-task",
            "7",
            "--dim",
            "5",
            "--seed",
            "4",
            "--out",
        ])
        .arg(&csv_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    let run_dir = dir.path().join("run");
    let out = binary()
        .args([
            "run",
            "--n-tasks",
            "3",
            "--terminals-per-task",
            "2",
            "--lambda1",
            "1.0",
            "--test-fraction",
            "0.25",
            "--server-iterations",
            "1",
            "--csv",
        ])
        .arg(&csv_path)
        .arg("--out-dir")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["config"]["data"]["kind"], "csv");
}

#[test]
fn sweep_writes_long_and_aggregate_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args([
            "sweep",
            "--axis",
            "budget",
            "--values",
            "200,400",
            "--seeds",
            "1,2",
            "--algorithms",
            "rhfedmtl,fedavg",
            "--n-tasks",
            "2",
            "--terminals-per-task",
            "2",
            "--lambda1",
            "1.0",
            "--train-per-task",
            "12",
            "--test-per-task",
            "4",
            "--dim",
            "3",
            "--server-iterations",
            "1",
            "--out-dir",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    // Header plus 2 values x 2 seeds x 2 algorithms.
    assert_eq!(runs.lines().count(), 1 + 8);
    let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 4);
    let mut reader = csv::Reader::from_reader(agg.as_bytes());
    for record in reader.records() {
        let r = record.unwrap();
        assert_eq!(r.get(3).unwrap(), "2", "each cell aggregates two seeds");
    }
}

#[test]
fn plan_table_matches_direct_formula_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let table_path = dir.path().join("t.csv");
    let out = binary()
        .args([
            "plan",
            "--n-per-task",
            "350",
            "--max-shard",
            "70",
            "--h-max",
            "5",
            "--table",
            "--out",
        ])
        .arg(&table_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = std::fs::read_to_string(&table_path).unwrap();
    let first = table.lines().nth(1).unwrap();
    let cells: Vec<&str> = first.split(',').collect();
    let theta: f64 = cells[1].parse().unwrap();
    let direct = rhfedmtl_core::planner::theta(1, 350, 70, 1.0, 1e-4, 1e-6);
    assert_eq!(theta.to_bits(), direct.to_bits());
}
