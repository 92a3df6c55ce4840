//! Dataset ingestion, per-task/per-terminal partitioning and the synthetic
//! related-task generator.
//!
//! Training data is sharded across terminals and never leaves its shard;
//! each task additionally holds a test split used only for evaluation at
//! the BS level.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::mix_seed;

/// One labeled observation. Labels are -1.0 or +1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Feature vector of length d.
    pub features: Vec<f64>,
    /// Binary label, -1 or +1.
    pub label: f64,
}

/// The private training shard of one terminal. Samples are immutable after
/// construction and the type deliberately implements no serialization: raw
/// observations do not cross the terminal boundary.
#[derive(Debug, Clone)]
pub struct TerminalShard {
    samples: Vec<Sample>,
    /// (task index, terminal index) pair identifying the owner.
    pub terminal_id: (usize, usize),
}

impl TerminalShard {
    /// Builds a shard, validating labels and finiteness.
    pub fn new(samples: Vec<Sample>, terminal_id: (usize, usize)) -> Result<TerminalShard> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "terminal {terminal_id:?} must hold at least one sample"
            )));
        }
        for s in &samples {
            if s.label != 1.0 && s.label != -1.0 {
                return Err(Error::InvalidParameter(format!(
                    "label {} is not -1/+1",
                    s.label
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("shard feature".into()));
            }
        }
        Ok(TerminalShard {
            samples,
            terminal_id,
        })
    }

    /// Read-only view of the local samples.
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    // Mutation is confined to dataset construction (standardization).
    pub(crate) fn samples_mut(&mut self) -> &mut [Sample] {
        &mut self.samples
    }

    /// Shard size S_{b,t}.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// True when the shard holds no samples (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// All data belonging to one task: terminal shards plus the BS-held test set.
#[derive(Debug, Clone)]
pub struct TaskData {
    /// Task index b.
    pub index: usize,
    /// Terminal shards in terminal order.
    pub shards: Vec<TerminalShard>,
    /// Test samples held at the BS.
    pub test: Vec<Sample>,
}

impl TaskData {
    /// Total training count n_b = sum of shard sizes.
    pub fn n_b(&self) -> usize {
        self.shards.iter().map(|s| s.len()).sum()
    }

    /// Size of the largest terminal shard.
    pub fn n_tilde(&self) -> usize {
        self.shards.iter().map(|s| s.len()).max().unwrap_or(0)
    }

    /// Number of terminals N_b.
    pub fn terminals(&self) -> usize {
        self.shards.len()
    }

    /// Iterates training samples in dual-vector order (shard by shard).
    pub fn train_iter(&self) -> impl Iterator<Item = &Sample> {
        self.shards.iter().flat_map(|s| s.samples().iter())
    }
}

/// The full federated dataset: N tasks over a shared feature dimension.
#[derive(Debug, Clone)]
pub struct FederatedDataset {
    /// Per-task data.
    pub tasks: Vec<TaskData>,
    /// Feature dimension d, uniform across tasks.
    pub dim: usize,
}

impl FederatedDataset {
    /// Validates cross-task consistency.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Data("dataset has no tasks".into()));
        }
        for t in &self.tasks {
            if t.shards.is_empty() {
                return Err(Error::Data(format!("task {} has no shards", t.index)));
            }
            for shard in &t.shards {
                for s in shard.samples() {
                    if s.features.len() != self.dim {
                        return Err(Error::DimensionMismatch(format!(
                            "task {}: sample dim {} vs dataset dim {}",
                            t.index,
                            s.features.len(),
                            self.dim
                        )));
                    }
                }
            }
            for s in &t.test {
                if s.features.len() != self.dim {
                    return Err(Error::DimensionMismatch(format!(
                        "task {}: test dim {} vs dataset dim {}",
                        t.index,
                        s.features.len(),
                        self.dim
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds a dataset with one shard per task and no test split; used for
    /// small programmatic instances.
    pub fn from_raw_single_shard(tasks: Vec<Vec<(Vec<f64>, f64)>>) -> Result<FederatedDataset> {
        let dim = tasks
            .first()
            .and_then(|t| t.first())
            .map(|(x, _)| x.len())
            .ok_or_else(|| Error::Data("empty raw dataset".into()))?;
        let tasks = tasks
            .into_iter()
            .enumerate()
            .map(|(b, rows)| {
                let samples = rows
                    .into_iter()
                    .map(|(features, label)| Sample { features, label })
                    .collect();
                Ok(TaskData {
                    index: b,
                    shards: vec![TerminalShard::new(samples, (b, 0))?],
                    test: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let data = FederatedDataset { tasks, dim };
        data.validate()?;
        Ok(data)
    }

    /// Content hash of every sample (train and test), recorded in run
    /// outputs so an artifact pins the exact data it was produced from.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.tasks.len() as u64).to_le_bytes());
        hasher.update((self.dim as u64).to_le_bytes());
        let feed = |samples: &[Sample]| {
            let mut h = Sha256::new();
            h.update((samples.len() as u64).to_le_bytes());
            for s in samples {
                h.update(s.label.to_bits().to_le_bytes());
                for x in &s.features {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
            h.finalize()
        };
        for t in &self.tasks {
            hasher.update((t.index as u64).to_le_bytes());
            for shard in &t.shards {
                hasher.update(feed(shard.samples()));
            }
            hasher.update(feed(&t.test));
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Raw table produced by CSV ingestion: rows grouped by task key, sorted by
/// key for determinism.
#[derive(Debug, Clone)]
pub struct RawTable {
    /// (task key, rows) in lexicographic key order.
    pub groups: Vec<(String, Vec<Sample>)>,
    /// Feature dimension.
    pub dim: usize,
    /// Header names of the feature columns, in file order.
    pub feature_names: Vec<String>,
}

/// Parses a CSV file with a header row. `label_column` values equal to
/// `positive_label` map to +1, everything else to -1; `task_column` values
/// group rows into tasks. Every other column must be numeric.
pub fn load_csv(
    path: &Path,
    label_column: &str,
    task_column: &str,
    positive_label: &str,
) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Data(format!("missing label column '{label_column}'")))?;
    let task_idx = headers
        .iter()
        .position(|h| h == task_column)
        .ok_or_else(|| Error::Data(format!("missing task column '{task_column}'")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx && *i != task_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }

    let mut groups: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2; // header is line 1
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "line {line}: {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        let label_raw = record.get(label_idx).unwrap_or("");
        let label = if label_raw == positive_label {
            1.0
        } else {
            -1.0
        };
        let task_key = record.get(task_idx).unwrap_or("").to_string();
        let mut features = Vec::with_capacity(feature_names.len());
        for (i, field) in record.iter().enumerate() {
            if i == label_idx || i == task_idx {
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}: non-numeric feature '{}' in column '{}'",
                    field,
                    headers.get(i).unwrap_or("?")
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("line {line}: non-finite feature")));
            }
            features.push(v);
        }
        groups
            .entry(task_key)
            .or_default()
            .push(Sample { features, label });
    }
    if groups.is_empty() {
        return Err(Error::Data("csv contains no data rows".into()));
    }
    Ok(RawTable {
        groups: groups.into_iter().collect(),
        dim: feature_names.len(),
        feature_names,
    })
}

/// Splits raw task groups into terminal shards and a BS test set.
///
/// Each task's rows are shuffled with a task-specific stream of `seed`, the
/// last `round(test_fraction * rows)` go to the test split, and the rest
/// are dealt into `terminals_per_task` nearly equal shards (sizes differ by
/// at most one, remainder on the first terminals). The split is a pure
/// permutation; apply `standardize_dataset` afterwards to rescale features
/// for training.
pub fn partition(
    raw: &RawTable,
    n_tasks: usize,
    terminals_per_task: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<FederatedDataset> {
    if n_tasks == 0 || n_tasks > raw.groups.len() {
        return Err(Error::InvalidParameter(format!(
            "n_tasks = {n_tasks} but csv provides {} task groups",
            raw.groups.len()
        )));
    }
    if terminals_per_task == 0 {
        return Err(Error::InvalidParameter(
            "terminals_per_task must be >= 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidParameter(
            "test_fraction must lie in [0, 1)".into(),
        ));
    }
    let mut tasks = Vec::with_capacity(n_tasks);
    for (b, (_key, rows)) in raw.groups.iter().take(n_tasks).enumerate() {
        let mut rows = rows.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0xda7a, b as u64]));
        // Fisher-Yates with the task-local stream.
        for i in (1..rows.len()).rev() {
            let j = rng.random_range(0..=i);
            rows.swap(i, j);
        }
        let test_count = (test_fraction * rows.len() as f64 + 0.5).floor() as usize;
        let train_count = rows.len() - test_count;
        if train_count < terminals_per_task {
            return Err(Error::InvalidParameter(format!(
                "task {b}: {train_count} training rows cannot fill {terminals_per_task} terminals"
            )));
        }
        let test: Vec<Sample> = rows[train_count..].to_vec();
        let train: Vec<Sample> = rows[..train_count].to_vec();

        let base = train_count / terminals_per_task;
        let extra = train_count % terminals_per_task;
        let mut shards = Vec::with_capacity(terminals_per_task);
        let mut cursor = 0;
        for t in 0..terminals_per_task {
            let size = base + usize::from(t < extra);
            let chunk = train[cursor..cursor + size].to_vec();
            cursor += size;
            shards.push(TerminalShard::new(chunk, (b, t))?);
        }
        tasks.push(TaskData {
            index: b,
            shards,
            test,
        });
    }
    let data = FederatedDataset {
        tasks,
        dim: raw.dim,
    };
    data.validate()?;
    Ok(data)
}

/// Per-task, per-dimension standardization: zero mean and unit variance
/// computed over the training split and applied to train and test rows.
/// Near-constant dimensions are centered but not scaled. Coordinate step
/// quality depends on feature norms, so ingested CSV data passes through
/// this before training; the synthetic generator already emits standard
/// normal features.
pub fn standardize_dataset(data: &mut FederatedDataset) {
    let dim = data.dim;
    for task in &mut data.tasks {
        let n = task.n_b() as f64;
        let mut mean = vec![0.0; dim];
        for shard in &task.shards {
            for s in shard.samples() {
                for (m, x) in mean.iter_mut().zip(&s.features) {
                    *m += x;
                }
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for shard in &task.shards {
            for s in shard.samples() {
                for ((v, m), x) in var.iter_mut().zip(&mean).zip(&s.features) {
                    *v += (x - m) * (x - m);
                }
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let apply = |s: &mut Sample| {
            for ((x, m), sc) in s.features.iter_mut().zip(&mean).zip(&scale) {
                *x = (*x - m) / sc;
            }
        };
        for shard in &mut task.shards {
            for s in shard.samples_mut() {
                apply(s);
            }
        }
        for s in &mut task.test {
            apply(s);
        }
    }
}

/// Parameters of the synthetic related-task generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    /// Training samples per task (split across the terminals).
    pub train_per_task: usize,
    /// Test samples per task, held at the BS.
    pub test_per_task: usize,
    /// Feature dimension.
    pub dim: usize,
    /// Task relatedness in [0, 1]: 1 gives identical true weights, 0 gives
    /// unrelated ones.
    pub relatedness: f64,
    /// Probability of flipping each generated label.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            train_per_task: 50,
            test_per_task: 20,
            dim: 10,
            relatedness: 0.7,
            noise: 0.05,
        }
    }
}

/// Synthetic dataset plus the true task weights it was generated from.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// The generated dataset.
    pub data: FederatedDataset,
    /// Unit-norm true weight vector per task.
    pub true_weights: Vec<Vec<f64>>,
}

fn unit_normal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    // Box-Muller from uniform draws; normalized afterwards where needed.
    let mut v = Vec::with_capacity(dim);
    while v.len() < dim {
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        v.push(radius * angle.cos());
        if v.len() < dim {
            v.push(radius * angle.sin());
        }
    }
    v
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    }
    v
}

/// Generates related binary tasks: a shared unit direction `u` and per-task
/// unit perturbations `delta_b` mix as `rho * u + (1 - rho) * delta_b`
/// (renormalized) to form true weights; features are standard normal and
/// labels are the true sign flipped with probability `noise`.
pub fn synth_tasks(
    n_tasks: usize,
    terminals_per_task: usize,
    spec: &SynthSpec,
    seed: u64,
) -> Result<SynthOutput> {
    if spec.dim == 0 {
        return Err(Error::InvalidParameter("dim must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.relatedness) {
        return Err(Error::InvalidParameter(
            "relatedness must lie in [0, 1]".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.noise) {
        return Err(Error::InvalidParameter("noise must lie in [0, 1]".into()));
    }
    if spec.train_per_task < terminals_per_task {
        return Err(Error::InvalidParameter(format!(
            "train_per_task = {} cannot fill {terminals_per_task} terminals",
            spec.train_per_task
        )));
    }
    let mut base_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x5ba5e]));
    let base = normalized(unit_normal(&mut base_rng, spec.dim));

    let mut true_weights = Vec::with_capacity(n_tasks);
    let mut tasks = Vec::with_capacity(n_tasks);
    for b in 0..n_tasks {
        let mut task_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x7a5c, b as u64]));
        let delta = normalized(unit_normal(&mut task_rng, spec.dim));
        let w_true: Vec<f64> = normalized(
            base.iter()
                .zip(&delta)
                .map(|(u, d)| spec.relatedness * u + (1.0 - spec.relatedness) * d)
                .collect(),
        );

        let draw = |rng: &mut ChaCha8Rng, count: usize| -> Vec<Sample> {
            (0..count)
                .map(|_| {
                    let features = unit_normal(rng, spec.dim);
                    let margin: f64 = features.iter().zip(&w_true).map(|(x, w)| x * w).sum();
                    let mut label = if margin >= 0.0 { 1.0 } else { -1.0 };
                    if rng.random::<f64>() < spec.noise {
                        label = -label;
                    }
                    Sample { features, label }
                })
                .collect()
        };
        let train = draw(&mut task_rng, spec.train_per_task);
        let test = draw(&mut task_rng, spec.test_per_task);

        let base_size = spec.train_per_task / terminals_per_task;
        let extra = spec.train_per_task % terminals_per_task;
        let mut shards = Vec::with_capacity(terminals_per_task);
        let mut cursor = 0;
        for t in 0..terminals_per_task {
            let size = base_size + usize::from(t < extra);
            shards.push(TerminalShard::new(
                train[cursor..cursor + size].to_vec(),
                (b, t),
            )?);
            cursor += size;
        }
        true_weights.push(w_true);
        tasks.push(TaskData {
            index: b,
            shards,
            test,
        });
    }
    let data = FederatedDataset {
        tasks,
        dim: spec.dim,
    };
    data.validate()?;
    Ok(SynthOutput { data, true_weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_csv_toy_exact() {
        let f = write_csv("subject,f0,f1,activity\ns1,0.5,-1.25,sitting\ns1,2.0,3.5,walking\n");
        let raw = load_csv(f.path(), "activity", "subject", "sitting").unwrap();
        assert_eq!(raw.dim, 2);
        assert_eq!(raw.groups.len(), 1);
        let rows = &raw.groups[0].1;
        assert_eq!(rows[0].features, vec![0.5, -1.25]);
        assert_eq!(rows[0].label, 1.0);
        assert_eq!(rows[1].features, vec![2.0, 3.5]);
        assert_eq!(rows[1].label, -1.0);
    }

    #[test]
    fn load_csv_missing_label_column() {
        let f = write_csv("subject,f0\ns1,0.5\n");
        let err = load_csv(f.path(), "activity", "subject", "sitting").unwrap_err();
        assert!(err.to_string().contains("activity"), "{err}");
    }

    #[test]
    fn load_csv_rejects_non_numeric_feature() {
        let f = write_csv("subject,f0,activity\ns1,abc,sitting\n");
        let err = load_csv(f.path(), "activity", "subject", "sitting").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn partition_70_rows_five_terminals() {
        // 70 rows per task, 2/7 test fraction: 20 test rows, 5 shards of 10.
        let mut content = String::from("subject,f0,f1,activity\n");
        for s in 0..2 {
            for i in 0..70 {
                content.push_str(&format!(
                    "s{s},{},{},{}\n",
                    i as f64 * 0.1,
                    (i % 7) as f64,
                    if i % 2 == 0 { "sitting" } else { "walking" }
                ));
            }
        }
        let f = write_csv(&content);
        let raw = load_csv(f.path(), "activity", "subject", "sitting").unwrap();
        let data = partition(&raw, 2, 5, 2.0 / 7.0, 9).unwrap();
        for t in &data.tasks {
            assert_eq!(t.test.len(), 20);
            assert_eq!(t.n_b(), 50);
            assert_eq!(t.terminals(), 5);
            for shard in &t.shards {
                assert_eq!(shard.len(), 10);
            }
            assert_eq!(t.n_tilde(), 10);
        }
    }

    #[test]
    fn partition_single_terminal_takes_everything() {
        let f = write_csv("subject,f0,activity\ns1,1.0,a\ns1,2.0,b\ns1,3.0,a\n");
        let raw = load_csv(f.path(), "activity", "subject", "a").unwrap();
        let data = partition(&raw, 1, 1, 0.0, 3).unwrap();
        assert_eq!(data.tasks[0].terminals(), 1);
        assert_eq!(data.tasks[0].n_b(), 3);
        assert_eq!(data.tasks[0].n_tilde(), 3);
        assert!(data.tasks[0].test.is_empty());
    }

    #[test]
    fn partition_deterministic_per_seed() {
        let mut content = String::from("subject,f0,activity\n");
        for i in 0..20 {
            content.push_str(&format!("s1,{},{}\n", i, if i < 10 { "a" } else { "b" }));
        }
        let f = write_csv(&content);
        let raw = load_csv(f.path(), "activity", "subject", "a").unwrap();
        let a = partition(&raw, 1, 3, 0.25, 42).unwrap();
        let b = partition(&raw, 1, 3, 0.25, 42).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = partition(&raw, 1, 3, 0.25, 43).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn har_shaped_file_parses_to_thirty_tasks() {
        // Same shape as the activity-recognition corpus: 561 features,
        // one subject column, 70 rows per subject, 30 subjects.
        let dims = 561;
        let mut content = String::from("subject,");
        for j in 0..dims {
            content.push_str(&format!("f{j},"));
        }
        content.push_str("activity\n");
        for s in 0..30 {
            for i in 0..70 {
                content.push_str(&format!("s{s:02},"));
                for j in 0..dims {
                    content.push_str(&format!("{},", ((i * j + s) % 13) as f64 * 0.01));
                }
                content.push_str(if i % 3 == 0 { "sitting\n" } else { "walking\n" });
            }
        }
        let f = write_csv(&content);
        let raw = load_csv(f.path(), "activity", "subject", "sitting").unwrap();
        assert_eq!(raw.dim, 561);
        assert_eq!(raw.groups.len(), 30);
        assert!(raw.groups.iter().all(|(_, rows)| rows.len() == 70));
    }

    #[test]
    fn synth_rho_one_gives_identical_true_weights() {
        let spec = SynthSpec {
            relatedness: 1.0,
            noise: 0.0,
            ..Default::default()
        };
        let out = synth_tasks(4, 2, &spec, 11).unwrap();
        for w in &out.true_weights[1..] {
            for (a, b) in w.iter().zip(&out.true_weights[0]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        // noise = 0 means labels match the true sign exactly.
        for (b, task) in out.data.tasks.iter().enumerate() {
            for s in task.train_iter() {
                let margin: f64 = s
                    .features
                    .iter()
                    .zip(&out.true_weights[b])
                    .map(|(x, w)| x * w)
                    .sum();
                assert_eq!(s.label, if margin >= 0.0 { 1.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn synth_label_flip_rate_within_binomial_band() {
        let spec = SynthSpec {
            train_per_task: 500,
            test_per_task: 0,
            dim: 6,
            relatedness: 0.5,
            noise: 0.2,
        };
        let out = synth_tasks(3, 5, &spec, 21).unwrap();
        let mut flips = 0usize;
        let mut total = 0usize;
        for (b, task) in out.data.tasks.iter().enumerate() {
            for s in task.train_iter() {
                let margin: f64 = s
                    .features
                    .iter()
                    .zip(&out.true_weights[b])
                    .map(|(x, w)| x * w)
                    .sum();
                let clean = if margin >= 0.0 { 1.0 } else { -1.0 };
                if s.label != clean {
                    flips += 1;
                }
                total += 1;
            }
        }
        let p = 0.2;
        let n = total as f64;
        let sd = (p * (1.0 - p) / n).sqrt();
        let rate = flips as f64 / n;
        assert!(
            (rate - p).abs() <= 3.0 * sd,
            "flip rate {rate} outside 3-sigma band around {p}"
        );
    }

    #[test]
    fn synth_rejects_bad_relatedness() {
        let spec = SynthSpec {
            relatedness: 1.5,
            ..Default::default()
        };
        assert!(synth_tasks(2, 2, &spec, 1).is_err());
    }
}
