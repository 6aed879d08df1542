//! Wall-clock comparison: one dual-group FTL-TP run against the summed time
//! of two single-group runs producing the same two models.
//!
//! Monotonic clocks wrap the same phases the networked mode runs
//! (initial weight distribution through the end of the last round), so the
//! two modes are comparable. Model outputs are hashed so callers can check
//! that repeated timings differ only in the timing fields.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fl::{run_federation, GroupId, Strategy, StrategyConfig};
use crate::harness::{trial::generate_group, ExperimentConfig};
use crate::nn::write_checkpoint;
use crate::scalar::Scalar;
use crate::seed::splitmix64;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TimingRow {
    pub label: String,
    /// Median wall time over the measurement repetitions.
    pub wall_ms: f64,
    /// Hash of the produced group-A model checkpoint.
    pub model_hash_a: u64,
    /// Hash of the produced group-B model checkpoint.
    pub model_hash_b: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TimingReport {
    pub rounds: u32,
    pub reps: u32,
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    pub fn row(&self, label: &str) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn hash_model<T: Scalar>(model: &crate::nn::ModelParams<T>) -> u64 {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, model).expect("in-memory checkpoint");
    let mut h: u64 = 0x51_7C_C1_B7_27_22_0A_95;
    for chunk in bytes.chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        h = splitmix64(h ^ u64::from_le_bytes(buf));
    }
    h
}

struct TimedRun {
    wall_ms: f64,
    hashes: BTreeMap<GroupId, u64>,
}

fn timed_federation<T: Scalar>(
    cfg: &ExperimentConfig,
    strategy: StrategyConfig,
    groups: &[char],
    rounds: u32,
) -> Result<TimedRun> {
    // Assemble clients outside the timed section; the measured span starts
    // at initial weight distribution, as in the networked mode.
    let mut clients = Vec::new();
    for g in groups {
        let (spec, scheme, first_id, other_target, target) = match g {
            'a' => (
                &cfg.group_a,
                &cfg.partition_a,
                0,
                cfg.effective_target_b(),
                cfg.target_a.clone(),
            ),
            _ => (
                &cfg.group_b,
                &cfg.partition_b,
                super::trial::GROUP_B_ID_OFFSET,
                cfg.target_a.clone(),
                cfg.effective_target_b(),
            ),
        };
        let domains = generate_group::<T>(cfg, spec)?;
        let mode = super::trial::partition_mode(cfg.partition_mode, scheme, &domains, &target)?;
        let pseed = crate::seed::derive_str(
            cfg.data_seed,
            "partition",
            &[&spec.name, &target, &other_target],
            &[],
        );
        let (plan, shards) = crate::data::partition(&domains, &target, &mode, pseed, first_id)?;
        for (a, s) in plan.assignments.iter().zip(shards.iter()) {
            clients.push(crate::fl::ClientSpec {
                client_id: a.client_id,
                group: GroupId::new(&spec.name),
                data: s.data.clone(),
            });
        }
    }
    let mut strategy = strategy;
    strategy.rounds = rounds;
    let eval = BTreeMap::new();
    let start = Instant::now();
    let run = run_federation(&strategy, &clients, &eval, cfg.master_seed)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let hashes = run
        .final_state()
        .models
        .iter()
        .map(|(g, m)| (g.clone(), hash_model(m)))
        .collect();
    Ok(TimedRun { wall_ms, hashes })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

/// Produce the four comparison rows: summed single-group FedAvg, FedProx
/// and FedProx+L2R runs, against one dual-group FTL-TP run. `reps` repeats
/// every measurement and reports the median.
pub fn run_timing<T: Scalar>(
    cfg: &ExperimentConfig,
    rounds: u32,
    reps: u32,
) -> Result<TimingReport> {
    cfg.validate()?;
    let reps = reps.max(1);
    let group_a = GroupId::new(&cfg.group_a.name);
    let group_b = GroupId::new(&cfg.group_b.name);

    let single_strategies: Vec<(&str, StrategyConfig)> = vec![
        ("fedavg-sum", StrategyConfig::for_strategy(Strategy::FedAvg)),
        ("fedprox-sum", StrategyConfig::for_strategy(Strategy::FedProx)),
        ("fedprox-l2r-sum", {
            // Same composite loss as FTL-TP, run per group.
            let mut s = StrategyConfig::for_strategy(Strategy::FedL2R);
            s.mu = cfg.strategy.mu;
            s.alpha_l2r = cfg.strategy.alpha_l2r;
            s
        }),
    ];

    let mut rows = Vec::new();
    for (label, mut strategy) in single_strategies {
        strategy.hidden = cfg.strategy.hidden.clone();
        strategy.base_cut = cfg.strategy.base_cut;
        strategy.batch_size = cfg.strategy.batch_size;
        strategy.eta = cfg.strategy.eta;
        strategy.local_epochs = cfg.strategy.local_epochs;
        strategy.optimizer = cfg.strategy.optimizer;
        let mut walls = Vec::new();
        let mut hash_a = 0;
        let mut hash_b = 0;
        for _ in 0..reps {
            let run_a = timed_federation::<T>(cfg, strategy.clone(), &['a'], rounds)?;
            let run_b = timed_federation::<T>(cfg, strategy.clone(), &['b'], rounds)?;
            walls.push(run_a.wall_ms + run_b.wall_ms);
            hash_a = run_a.hashes[&group_a];
            hash_b = run_b.hashes[&group_b];
        }
        rows.push(TimingRow {
            label: label.to_string(),
            wall_ms: median(walls),
            model_hash_a: hash_a,
            model_hash_b: hash_b,
        });
    }

    let mut ftl = cfg.strategy.clone();
    ftl.strategy = Strategy::FtlTp;
    let mut walls = Vec::new();
    let mut hash_a = 0;
    let mut hash_b = 0;
    for _ in 0..reps {
        let run = timed_federation::<T>(cfg, ftl.clone(), &['a', 'b'], rounds)?;
        walls.push(run.wall_ms);
        hash_a = run.hashes[&group_a];
        hash_b = run.hashes[&group_b];
    }
    rows.push(TimingRow {
        label: "ftl-tp".to_string(),
        wall_ms: median(walls),
        model_hash_a: hash_a,
        model_hash_b: hash_b,
    });

    Ok(TimingReport {
        rounds,
        reps,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DomainSize, GroupSpec};
    use crate::harness::{ExperimentConfig, Method, ShiftProfile};

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_m_s(Method::FtlTp);
        cfg.group_a = GroupSpec {
            name: "M".into(),
            num_classes: 2,
            domains: ["a0", "a1"]
                .into_iter()
                .map(|n| DomainSize {
                    name: n.into(),
                    size: 12,
                })
                .collect(),
        };
        cfg.group_b = GroupSpec {
            name: "S".into(),
            num_classes: 2,
            domains: ["b0", "b1"]
                .into_iter()
                .map(|n| DomainSize {
                    name: n.into(),
                    size: 12,
                })
                .collect(),
        };
        cfg.target_a = "a1".into();
        cfg.shift = ShiftProfile {
            feature_dim: 16,
            subspace_dim: 3,
            nuisance_dim: 3,
            ..ShiftProfile::default()
        };
        cfg.strategy.hidden = vec![6];
        cfg.strategy.base_cut = 1;
        cfg
    }

    #[test]
    fn report_has_four_rows_in_order() {
        let cfg = tiny_config();
        let report = run_timing::<f64>(&cfg, 1, 1).unwrap();
        let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            vec!["fedavg-sum", "fedprox-sum", "fedprox-l2r-sum", "ftl-tp"]
        );
    }

    #[test]
    fn zero_rounds_cost_next_to_nothing() {
        let cfg = tiny_config();
        let report = run_timing::<f64>(&cfg, 0, 1).unwrap();
        assert!(report.rows.iter().all(|r| r.wall_ms < 1_000.0));
    }

    #[test]
    fn timing_repeats_share_model_outputs() {
        let cfg = tiny_config();
        let a = run_timing::<f64>(&cfg, 1, 1).unwrap();
        let b = run_timing::<f64>(&cfg, 1, 1).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.model_hash_a, rb.model_hash_a);
            assert_eq!(ra.model_hash_b, rb.model_hash_b);
        }
    }
}
