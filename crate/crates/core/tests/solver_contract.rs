//! Behavioral contracts of the local dual method: monotone ascent of the
//! task dual along a round, and the expected per-round contraction of the
//! per-terminal gap.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rhfedmtl_core::data::{Sample, TaskData, TerminalShard};
use rhfedmtl_core::objective::{
    dual_objective_task, recover_weights, RegulationParams, SmoothLoss,
};
use rhfedmtl_core::planner::theta;
use rhfedmtl_core::solver::{coordinate_update, local_round, TerminalDual};
use rhfedmtl_core::FederatedDataset;

/// Builds one task with the given shards; feature norms stay at or below 1.
fn instance(terminals: usize, per_shard: usize, dim: usize, seed: u64) -> FederatedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shards: Vec<TerminalShard> = (0..terminals)
        .map(|t| {
            let samples = (0..per_shard)
                .map(|_| {
                    let mut x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 1.0 {
                        for v in &mut x {
                            *v /= norm;
                        }
                    }
                    Sample {
                        features: x,
                        label: if rng.random::<bool>() { 1.0 } else { -1.0 },
                    }
                })
                .collect();
            TerminalShard::new(samples, (0, t)).unwrap()
        })
        .collect();
    FederatedDataset {
        tasks: vec![TaskData {
            index: 0,
            shards,
            test: Vec::new(),
        }],
        dim,
    }
}

fn block_bounds(data: &FederatedDataset, t: usize) -> (usize, usize) {
    let mut start = 0;
    for (i, shard) in data.tasks[0].shards.iter().enumerate() {
        if i == t {
            return (start, start + shard.len());
        }
        start += shard.len();
    }
    unreachable!()
}

/// Maximizes the task dual over one terminal's block, all other blocks
/// fixed, by cyclic exact coordinate steps until stationarity.
fn block_optimum(
    data: &FederatedDataset,
    reg: &RegulationParams,
    loss: &SmoothLoss,
    alpha: &[f64],
    t: usize,
) -> f64 {
    let td = &data.tasks[0];
    let n_b = td.n_b();
    let (lo, _hi) = block_bounds(data, t);
    let mut a = alpha.to_vec();
    let mut w = recover_weights(&a, reg, data, 0).unwrap().w;
    let shard = &td.shards[t];
    for _ in 0..100_000 {
        let mut biggest = 0.0f64;
        for (i, s) in shard.samples().iter().enumerate() {
            let idx = lo + i;
            let margin = s.label * w.iter().zip(&s.features).map(|(p, q)| p * q).sum::<f64>();
            let norm_sq: f64 = s.features.iter().map(|x| x * x).sum();
            let delta =
                coordinate_update(a[idx], margin, norm_sq, reg.sum(), n_b, loss.gamma).unwrap();
            a[idx] += delta;
            let coef = delta * s.label / (reg.sum() * n_b as f64);
            for (wj, xj) in w.iter_mut().zip(&s.features) {
                *wj += coef * xj;
            }
            biggest = biggest.max(delta.abs());
        }
        if biggest < 1e-14 {
            break;
        }
    }
    dual_objective_task(&a, reg, loss, data, 0).unwrap()
}

#[test]
fn task_dual_never_decreases_along_a_round() {
    // Runs of the same seed share their step prefix, so comparing the dual
    // after h and h+1 steps observes each individual coordinate step.
    let data = instance(2, 6, 3, 99);
    let reg = RegulationParams::new(0.8, 0.1, vec![0.1, -0.2, 0.05]).unwrap();
    let loss = SmoothLoss::new(1.0).unwrap();
    let td = &data.tasks[0];
    let n_b = td.n_b();
    let alpha = vec![0.0; n_b];
    let w = recover_weights(&alpha, &reg, &data, 0).unwrap().w;
    let (lo, _) = block_bounds(&data, 0);

    for seed in 0..10u64 {
        let mut prev = dual_objective_task(&alpha, &reg, &loss, &data, 0).unwrap();
        for h in 1..=12 {
            let dual = TerminalDual {
                alpha: alpha[lo..lo + td.shards[0].len()].to_vec(),
            };
            let up = local_round(&td.shards[0], &dual, &w, &reg, &loss, n_b, h, seed).unwrap();
            let mut merged = alpha.clone();
            for (i, d) in up.delta_alpha.iter().enumerate() {
                merged[lo + i] += d;
            }
            let value = dual_objective_task(&merged, &reg, &loss, &data, 0).unwrap();
            assert!(
                value + 1e-10 >= prev,
                "seed {seed}, h={h}: dual fell from {prev} to {value}"
            );
            prev = value;
        }
    }
}

#[test]
fn per_terminal_gap_contracts_at_the_predicted_rate() {
    // Average over seeded rounds: the post-round per-terminal gap must lie
    // at or below Theta(H) times the pre-round gap, within sampling error.
    let data = instance(3, 4, 3, 123);
    let reg = RegulationParams::new(1.0, 0.0, vec![0.0; 3]).unwrap();
    let loss = SmoothLoss::new(1.0).unwrap();
    let td = &data.tasks[0];
    let n_b = td.n_b();
    let n_tilde = td.n_tilde();
    let h = 2;
    let theta_h = theta(h, n_b, n_tilde, loss.gamma, reg.lambda1, reg.lambda2);

    let alpha = vec![0.0; n_b];
    let w = recover_weights(&alpha, &reg, &data, 0).unwrap().w;
    let base = dual_objective_task(&alpha, &reg, &loss, &data, 0).unwrap();

    for t in 0..td.terminals() {
        let opt = block_optimum(&data, &reg, &loss, &alpha, t);
        let pre_gap = opt - base;
        assert!(pre_gap > 1e-9, "terminal {t}: degenerate pre-round gap");

        let (lo, hi) = block_bounds(&data, t);
        let runs = 60;
        let mut post_gaps = Vec::with_capacity(runs);
        for seed in 0..runs as u64 {
            let dual = TerminalDual {
                alpha: alpha[lo..hi].to_vec(),
            };
            let up = local_round(&td.shards[t], &dual, &w, &reg, &loss, n_b, h, seed).unwrap();
            let mut merged = alpha.clone();
            for (i, d) in up.delta_alpha.iter().enumerate() {
                merged[lo + i] += d;
            }
            let value = dual_objective_task(&merged, &reg, &loss, &data, 0).unwrap();
            post_gaps.push(opt - value);
        }
        let mean = post_gaps.iter().sum::<f64>() / runs as f64;
        let var = post_gaps
            .iter()
            .map(|g| (g - mean) * (g - mean))
            .sum::<f64>()
            / (runs as f64 - 1.0);
        let stderr = (var / runs as f64).sqrt();
        assert!(
            mean <= theta_h * pre_gap + 3.0 * stderr + 1e-12,
            "terminal {t}: mean post gap {mean} above Theta * pre = {} (stderr {stderr})",
            theta_h * pre_gap
        );
    }
}
