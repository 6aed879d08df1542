//! One experiment trial: generate data, partition clients, train with the
//! configured method, and report target accuracy.

use std::collections::BTreeMap;

use crate::baselines::{train_cl, train_ctl, train_il};
use crate::data::{
    generate_synthetic, partition, DomainDataset, GroupSpec, PartitionMode, Samples, ShiftSpec,
};
use crate::error::{CoreError, Result};
use crate::fl::{run_federation, ClientSpec, GroupId, RoundMetrics, StrategyConfig};
use crate::harness::{BalanceMode, ExperimentConfig, GroupPartition, Method, UnbalancedScheme};
use crate::scalar::Scalar;
use crate::seed::{derive, derive_str};

/// Client ids: group A counts up from 0, group B from this offset.
pub const GROUP_B_ID_OFFSET: u32 = 100;

#[derive(Debug, Clone)]
pub struct TrialResult<T> {
    /// Accuracy of group A's final model on group A's target domain.
    pub accuracy_a: f64,
    /// Accuracy of group B's final model on its target (dual-group methods
    /// only).
    pub accuracy_b: Option<f64>,
    pub metrics: Vec<RoundMetrics>,
    pub warnings: Vec<String>,
    /// Final models, labeled by group name (FL methods) or by role
    /// (baselines: `cl`, `ctl`, `il-client-<id>`).
    pub models: Vec<(String, crate::nn::ModelParams<T>)>,
}

fn shift_spec(cfg: &ExperimentConfig, group: &GroupSpec, stream: u64) -> ShiftSpec {
    ShiftSpec {
        group: group.name.clone(),
        num_classes: group.num_classes,
        feature_dim: cfg.shift.feature_dim,
        subspace_dim: cfg.shift.subspace_dim,
        subspace_seed: cfg.subspace_seed,
        seed: stream,
        class_sep: cfg.shift.class_sep,
        within_scale: cfg.shift.within_scale,
        offset_scale: cfg.shift.offset_scale,
        nuisance_dim: cfg.shift.nuisance_dim,
        nuisance_scale: cfg.shift.nuisance_scale,
        noise_scale: cfg.shift.noise_scale,
        domain_offsets: None,
    }
}

/// Generate one group's domains from the experiment's data stream.
pub fn generate_group<T: Scalar>(
    cfg: &ExperimentConfig,
    group: &GroupSpec,
) -> Result<Vec<DomainDataset<T>>> {
    let stream = derive_str(cfg.data_seed, "group-data", &[&group.name], &[]);
    let sizes: Vec<(String, usize)> = group
        .domains
        .iter()
        .map(|d| (d.name.clone(), d.size))
        .collect();
    generate_synthetic(&shift_spec(cfg, group, stream), &sizes)
}

pub(crate) fn partition_mode(
    cfg_mode: BalanceMode,
    scheme: &GroupPartition,
    domains: &[DomainDataset<impl Scalar>],
    target: &str,
) -> Result<PartitionMode> {
    Ok(match cfg_mode {
        BalanceMode::Balanced => PartitionMode::Balanced,
        BalanceMode::Unbalanced => match scheme.scheme {
            UnbalancedScheme::All => PartitionMode::UnbalancedAll {
                weights: scheme.weights.clone(),
            },
            UnbalancedScheme::One => {
                let first_training = domains
                    .iter()
                    .find(|d| d.domain != target)
                    .map(|d| d.domain.clone())
                    .ok_or_else(|| CoreError::Empty("no training domain".into()))?;
                PartitionMode::UnbalancedOne {
                    domain: first_training,
                    weights: scheme.weights.clone(),
                }
            }
        },
    })
}

struct PreparedGroup<T> {
    clients: Vec<ClientSpec<T>>,
    pooled_sources: Samples<T>,
    target: Samples<T>,
    group_id: GroupId,
}

fn prepare_group<T: Scalar>(
    cfg: &ExperimentConfig,
    group: &GroupSpec,
    target: &str,
    scheme: &GroupPartition,
    first_client_id: u32,
    other_target: &str,
) -> Result<PreparedGroup<T>> {
    let domains = generate_group::<T>(cfg, group)?;
    let target_ds = domains
        .iter()
        .find(|d| d.domain == target)
        .ok_or_else(|| CoreError::InvalidConfig(format!("target {target:?} not found")))?;
    let mode = partition_mode(cfg.partition_mode, scheme, &domains, target)?;
    // Partition stream is fixed per (group, both targets) so repeats share
    // shards; the model seed is what varies across repeats.
    let pseed = derive_str(
        cfg.data_seed,
        "partition",
        &[&group.name, target, other_target],
        &[],
    );
    let (plan, shards) = partition(&domains, target, &mode, pseed, first_client_id)?;
    let clients: Vec<ClientSpec<T>> = plan
        .assignments
        .iter()
        .zip(shards.iter())
        .map(|(a, s)| ClientSpec {
            client_id: a.client_id,
            group: GroupId::new(&group.name),
            data: s.data.clone(),
        })
        .collect();
    let pooled_sources = Samples::concat(
        domains
            .iter()
            .filter(|d| d.domain != target)
            .map(|d| &d.data),
    )?;
    Ok(PreparedGroup {
        clients,
        pooled_sources,
        target: target_ds.data.clone(),
        group_id: GroupId::new(&group.name),
    })
}

/// Run one (target_a, target_b, repeat) trial. The model/shuffle seed is
/// `hash(master_seed, target_a, target_b, repeat)`, so no trial reads
/// another's stream.
pub fn run_trial<T: Scalar>(
    cfg: &ExperimentConfig,
    target_a: &str,
    target_b: &str,
    repeat: u32,
) -> Result<TrialResult<T>> {
    cfg.validate()?;
    let trial_seed = derive_str(
        cfg.master_seed,
        "trial",
        &[target_a, target_b],
        &[repeat as u64],
    );
    let a = prepare_group::<T>(cfg, &cfg.group_a, target_a, &cfg.partition_a, 0, target_b)?;
    let b = prepare_group::<T>(
        cfg,
        &cfg.group_b,
        target_b,
        &cfg.partition_b,
        GROUP_B_ID_OFFSET,
        target_a,
    )?;

    match cfg.method {
        Method::FtlTp => {
            let mut clients = a.clients;
            clients.extend(b.clients);
            let mut eval = BTreeMap::new();
            eval.insert(a.group_id.clone(), a.target.clone());
            eval.insert(b.group_id.clone(), b.target.clone());
            let mut strategy = cfg.strategy.clone();
            strategy.strategy = crate::fl::Strategy::FtlTp;
            let run = run_federation(&strategy, &clients, &eval, trial_seed)?;
            let final_models = &run.final_state().models;
            Ok(TrialResult {
                accuracy_a: a.target.accuracy(&final_models[&a.group_id])?,
                accuracy_b: Some(b.target.accuracy(&final_models[&b.group_id])?),
                models: final_models
                    .iter()
                    .map(|(g, m)| (g.to_string(), m.clone()))
                    .collect(),
                metrics: run.metrics,
                warnings: run.warnings,
            })
        }
        Method::FedAvg | Method::FedProx | Method::FedL2r => {
            let strategy_kind = cfg.method.as_strategy().expect("FL method");
            let mut strategy = cfg.strategy.clone();
            strategy.strategy = strategy_kind;
            sanitize_for(&mut strategy);
            let mut eval = BTreeMap::new();
            eval.insert(a.group_id.clone(), a.target.clone());
            let run = run_federation(&strategy, &a.clients, &eval, trial_seed)?;
            let final_models = &run.final_state().models;
            Ok(TrialResult {
                accuracy_a: a.target.accuracy(&final_models[&a.group_id])?,
                accuracy_b: None,
                models: final_models
                    .iter()
                    .map(|(g, m)| (g.to_string(), m.clone()))
                    .collect(),
                metrics: run.metrics,
                warnings: run.warnings,
            })
        }
        Method::Il => {
            let res = train_il(&a.clients, &a.target, &cfg.baseline, trial_seed)?;
            Ok(TrialResult {
                accuracy_a: res.mean_accuracy,
                accuracy_b: None,
                models: res
                    .models
                    .into_iter()
                    .map(|(id, m)| (format!("il-client-{id}"), m))
                    .collect(),
                metrics: Vec::new(),
                warnings: Vec::new(),
            })
        }
        Method::Cl => {
            let (model, acc) = train_cl(
                &a.pooled_sources,
                &a.target,
                &cfg.baseline,
                derive(trial_seed, "cl", &[]),
            )?;
            Ok(TrialResult {
                accuracy_a: acc,
                accuracy_b: None,
                models: vec![("cl".to_string(), model)],
                metrics: Vec::new(),
                warnings: Vec::new(),
            })
        }
        Method::Ctl => {
            // Pretrain on the partner group's pooled sources, fine-tune on
            // the reported group, evaluate on its target.
            let (model, acc) = train_ctl(
                &b.pooled_sources,
                &a.pooled_sources,
                &a.target,
                &cfg.baseline,
                derive(trial_seed, "ctl", &[]),
            )?;
            Ok(TrialResult {
                accuracy_a: acc,
                accuracy_b: None,
                models: vec![("ctl".to_string(), model)],
                metrics: Vec::new(),
                warnings: Vec::new(),
            })
        }
    }
}

/// Strategy-specific penalty hygiene when a shared config is reused across
/// methods in a sweep: FedAvg zeroes both penalties, FedProx drops the
/// representation term (keeping its own mu default when the shared config
/// carries none).
fn sanitize_for(strategy: &mut StrategyConfig) {
    let defaults = StrategyConfig::for_strategy(strategy.strategy);
    match strategy.strategy {
        crate::fl::Strategy::FedAvg => {
            strategy.mu = 0.0;
            strategy.alpha_l2r = 0.0;
        }
        crate::fl::Strategy::FedProx => {
            strategy.alpha_l2r = 0.0;
            if strategy.mu == 0.0 {
                strategy.mu = defaults.mu;
            }
        }
        crate::fl::Strategy::FedL2R => {
            strategy.mu = 0.0;
            if strategy.alpha_l2r == 0.0 {
                strategy.alpha_l2r = defaults.alpha_l2r;
            }
        }
        crate::fl::Strategy::FtlTp => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DomainSize, GroupSpec};
    use crate::harness::ShiftProfile;

    pub(crate) fn tiny_config(method: Method) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_m_s(method);
        cfg.group_a = GroupSpec {
            name: "M".into(),
            num_classes: 3,
            domains: ["a0", "a1", "a2"]
                .into_iter()
                .map(|n| DomainSize {
                    name: n.into(),
                    size: 18,
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
        cfg.target_a = "a2".into();
        cfg.shift = ShiftProfile {
            feature_dim: 24,
            subspace_dim: 4,
            nuisance_dim: 4,
            ..ShiftProfile::default()
        };
        cfg.strategy.hidden = vec![8, 6];
        cfg.strategy.base_cut = 1;
        cfg.strategy.rounds = 2;
        cfg.baseline.hidden = vec![8, 6];
        cfg.baseline.epochs = 2;
        cfg.repeats = 2;
        cfg
    }

    #[test]
    fn trial_runs_every_method() {
        for method in [
            Method::FtlTp,
            Method::FedAvg,
            Method::FedProx,
            Method::FedL2r,
            Method::Il,
            Method::Cl,
            Method::Ctl,
        ] {
            let cfg = tiny_config(method);
            let res = run_trial::<f64>(&cfg, "a2", "b1", 0)
                .unwrap_or_else(|e| panic!("{method:?}: {e}"));
            assert!(
                (0.0..=1.0).contains(&res.accuracy_a),
                "{method:?} accuracy {}",
                res.accuracy_a
            );
        }
    }

    #[test]
    fn trials_are_deterministic_and_repeat_sensitive() {
        let cfg = tiny_config(Method::FtlTp);
        let a = run_trial::<f64>(&cfg, "a2", "b1", 0).unwrap();
        let b = run_trial::<f64>(&cfg, "a2", "b1", 0).unwrap();
        assert_eq!(a.accuracy_a, b.accuracy_a);
        assert_eq!(a.accuracy_b, b.accuracy_b);
    }
}
