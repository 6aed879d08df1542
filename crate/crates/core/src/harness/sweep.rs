//! Target-domain sweeps with the two-stage aggregation protocol, and the
//! client-fraction sweep built on top.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::{run_trial, ExperimentConfig};
use crate::metrics::{mean, sample_std, TrialRow};
use crate::scalar::Scalar;

/// Per-(group-B target) aggregate over repeats.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CombinationAgg {
    pub target_b: String,
    pub mean: f64,
    pub std: f64,
}

/// Result of one target sweep: for a fixed group-A target, every group-B
/// target is tried `repeats` times; the reported numbers are the mean of
/// the per-combination means and the mean of the per-combination standard
/// deviations (with the pooled std emitted alongside).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepResult {
    pub method: String,
    pub target_a: String,
    pub repeats: u32,
    pub rows: Vec<TrialRow>,
    pub combinations: Vec<CombinationAgg>,
    pub mean_of_means: f64,
    pub mean_of_stds: f64,
    pub pooled_std: f64,
}

/// The two-stage protocol over per-combination accuracy lists: mean and
/// sample std per combination, then plain averages of those across
/// combinations. `pooled` is the square root of the averaged variances.
pub fn two_stage_aggregate(per_combination: &[(String, Vec<f64>)]) -> (Vec<CombinationAgg>, f64, f64, f64) {
    let combos: Vec<CombinationAgg> = per_combination
        .iter()
        .map(|(target_b, accs)| CombinationAgg {
            target_b: target_b.clone(),
            mean: mean(accs),
            std: sample_std(accs),
        })
        .collect();
    let means: Vec<f64> = combos.iter().map(|c| c.mean).collect();
    let stds: Vec<f64> = combos.iter().map(|c| c.std).collect();
    let pooled = (stds.iter().map(|s| s * s).sum::<f64>() / stds.len().max(1) as f64).sqrt();
    let (mom, mos) = (mean(&means), mean(&stds));
    (combos, mom, mos, pooled)
}

/// Run the full sweep for the config's `target_a`: every group-B domain as
/// the partner target, `repeats` trials each. Trials run in parallel; each
/// writes into its pre-assigned slot, so the output is order-independent.
pub fn run_target_sweep<T: Scalar>(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let target_a = cfg.target_a.clone();
    let combos: Vec<String> = cfg
        .group_b
        .domains
        .iter()
        .map(|d| d.name.clone())
        .collect();
    let mut descriptors = Vec::new();
    for target_b in &combos {
        for repeat in 0..cfg.repeats {
            descriptors.push((target_b.clone(), repeat));
        }
    }
    let rows: Result<Vec<TrialRow>> = descriptors
        .par_iter()
        .map(|(target_b, repeat)| {
            let res = run_trial::<T>(cfg, &target_a, target_b, *repeat)?;
            Ok(TrialRow {
                method: cfg.method.name().to_string(),
                target_a: target_a.clone(),
                target_b: target_b.clone(),
                repeat: *repeat,
                accuracy: res.accuracy_a,
            })
        })
        .collect();
    let rows = rows?;

    let per_combination: Vec<(String, Vec<f64>)> = combos
        .iter()
        .map(|target_b| {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| &r.target_b == target_b)
                .map(|r| r.accuracy)
                .collect();
            (target_b.clone(), accs)
        })
        .collect();
    let (combinations, mean_of_means, mean_of_stds, pooled_std) =
        two_stage_aggregate(&per_combination);

    Ok(SweepResult {
        method: cfg.method.name().to_string(),
        target_a,
        repeats: cfg.repeats,
        rows,
        combinations,
        mean_of_means,
        mean_of_stds,
        pooled_std,
    })
}

/// One row of the client-fraction comparison table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FractionRow {
    pub fraction: f64,
    pub result: SweepResult,
}

/// Repeat the target sweep for each client fraction. Trial seeds do not
/// depend on the fraction, so the `C = 1` row reproduces a plain sweep of
/// the same config bit-exactly.
pub fn run_fraction_sweep<T: Scalar>(
    cfg: &ExperimentConfig,
    fractions: &[f64],
) -> Result<Vec<FractionRow>> {
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut sub = cfg.clone();
        sub.strategy.fraction = fraction;
        sub.strategy.group_fractions.clear();
        let result = run_target_sweep::<T>(&sub)?;
        out.push(FractionRow { fraction, result });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DomainSize, GroupSpec};
    use crate::harness::{Method, ShiftProfile};

    fn tiny_config(method: Method) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_m_s(method);
        cfg.group_a = GroupSpec {
            name: "M".into(),
            num_classes: 3,
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
            domains: ["b0", "b1", "b2"]
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
        cfg.strategy.rounds = 1;
        cfg.baseline.hidden = vec![6];
        cfg.baseline.epochs = 1;
        cfg.repeats = 5;
        cfg
    }

    #[test]
    fn sweep_produces_combinations_times_repeats_trials() {
        let cfg = tiny_config(Method::FtlTp);
        let res = run_target_sweep::<f64>(&cfg).unwrap();
        assert_eq!(res.rows.len(), 15);
        assert_eq!(res.combinations.len(), 3);
    }

    #[test]
    fn two_stage_protocol_hand_example() {
        let per_combo = vec![
            ("x".to_string(), vec![0.78, 0.82]),
            ("y".to_string(), vec![0.9, 0.9]),
        ];
        let (combos, mom, mos, _) = two_stage_aggregate(&per_combo);
        assert!((combos[0].mean - 0.8).abs() < 1e-12);
        assert!((mom - 0.85).abs() < 1e-12);
        // std of {0.78, 0.82} is ~0.028284, of {0.9, 0.9} is 0.
        assert!((mos - combos[0].std / 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_accuracies_aggregate_to_zero_std() {
        let per_combo = vec![
            ("x".to_string(), vec![0.7, 0.7, 0.7]),
            ("y".to_string(), vec![0.7, 0.7, 0.7]),
        ];
        let (_, mom, mos, pooled) = two_stage_aggregate(&per_combo);
        assert!((mom - 0.7).abs() < 1e-12);
        assert_eq!(mos, 0.0);
        assert_eq!(pooled, 0.0);
    }

    #[test]
    fn sweep_is_reproducible() {
        let cfg = tiny_config(Method::FedAvg);
        let a = run_target_sweep::<f64>(&cfg).unwrap();
        let b = run_target_sweep::<f64>(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fraction_one_reproduces_plain_sweep() {
        let mut cfg = tiny_config(Method::FtlTp);
        cfg.strategy.fraction = 1.0;
        let plain = run_target_sweep::<f64>(&cfg).unwrap();
        let table = run_fraction_sweep::<f64>(&cfg, &[1.0 / 3.0, 1.0]).unwrap();
        let c1 = table.iter().find(|r| r.fraction == 1.0).unwrap();
        assert_eq!(c1.result, plain);
    }
}
