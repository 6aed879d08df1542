//! The federated round loop: sample -> broadcast -> local updates in
//! parallel -> aggregate -> record.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::Samples;
use crate::error::{CoreError, Result};
use crate::nn::{AdamState, ModelParams, OptimizerKind};
use crate::scalar::Scalar;
use crate::seed::derive;

use super::{
    aggregate_fedavg, aggregate_ftl_tp, client_update, sample_clients, GroupId, GroupModelSpec,
    LocalOutcome, Strategy, StrategyConfig,
};

/// One simulated client: identity, group membership and local data.
#[derive(Debug, Clone)]
pub struct ClientSpec<T> {
    pub client_id: u32,
    pub group: GroupId,
    pub data: Samples<T>,
}

/// Global models after a round (round 0 is the initialized state).
#[derive(Debug, Clone)]
pub struct GlobalState<T> {
    pub round: u32,
    pub models: BTreeMap<GroupId, ModelParams<T>>,
}

impl<T: Scalar> GlobalState<T> {
    /// Bit-level equality of the base segments across every group model.
    pub fn base_segments_identical(&self, base_cut: usize) -> bool {
        let mut iter = self.models.values();
        let first = match iter.next() {
            Some(m) => m,
            None => return true,
        };
        iter.all(|m| first.base_bits_eq(m, base_cut))
    }
}

/// Per-round, per-group metrics record.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u32,
    pub group: String,
    pub train_loss: f64,
    pub target_accuracy: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct FederationRun<T> {
    /// Initialized state, then (when history is kept) the state after every
    /// round; always ends with the final state when rounds >= 1.
    pub history: Vec<GlobalState<T>>,
    pub metrics: Vec<RoundMetrics>,
    pub warnings: Vec<String>,
    /// Groups that contributed no update in some round (their heads were
    /// carried forward).
    pub skipped_groups: Vec<(u32, GroupId)>,
}

impl<T: Scalar> FederationRun<T> {
    pub fn final_state(&self) -> &GlobalState<T> {
        self.history.last().expect("history is never empty")
    }
}

fn group_specs<T: Scalar>(clients: &[ClientSpec<T>]) -> Result<Vec<GroupModelSpec>> {
    if clients.is_empty() {
        return Err(CoreError::Empty("client list".into()));
    }
    let in_dim = clients[0].data.dim;
    let mut specs: BTreeMap<GroupId, GroupModelSpec> = BTreeMap::new();
    let mut seen_ids = std::collections::BTreeSet::new();
    for c in clients {
        if !seen_ids.insert(c.client_id) {
            return Err(CoreError::InvalidConfig(format!(
                "client id {} mapped twice",
                c.client_id
            )));
        }
        if c.data.dim != in_dim {
            return Err(CoreError::DimMismatch(format!(
                "client {} feature dim {} != {}",
                c.client_id, c.data.dim, in_dim
            )));
        }
        match specs.get(&c.group) {
            None => {
                specs.insert(
                    c.group.clone(),
                    GroupModelSpec {
                        group: c.group.clone(),
                        in_dim,
                        num_classes: c.data.num_classes,
                    },
                );
            }
            Some(existing) => {
                if existing.num_classes != c.data.num_classes {
                    return Err(CoreError::InvalidConfig(format!(
                        "client {} disagrees on class count for group {}",
                        c.client_id, c.group
                    )));
                }
            }
        }
    }
    Ok(specs.into_values().collect())
}

/// Run a federation and keep only the initial and final states in history.
pub fn run_federation<T: Scalar>(
    cfg: &StrategyConfig,
    clients: &[ClientSpec<T>],
    eval: &BTreeMap<GroupId, Samples<T>>,
    master_seed: u64,
) -> Result<FederationRun<T>> {
    run_federation_with(cfg, clients, eval, master_seed, false, |_| {})
}

/// Full-control variant: `keep_history` stores the state after every round,
/// and `observer` sees every state (including the initial one) as it is
/// produced.
pub fn run_federation_with<T: Scalar, F: FnMut(&GlobalState<T>)>(
    cfg: &StrategyConfig,
    clients: &[ClientSpec<T>],
    eval: &BTreeMap<GroupId, Samples<T>>,
    master_seed: u64,
    keep_history: bool,
    mut observer: F,
) -> Result<FederationRun<T>> {
    cfg.validate()?;
    let specs = group_specs(clients)?;
    let mut models = super::init_global_models::<T>(cfg, &specs, master_seed)?;

    let mut rosters: BTreeMap<GroupId, Vec<u32>> = BTreeMap::new();
    for c in clients {
        rosters.entry(c.group.clone()).or_default().push(c.client_id);
    }
    for ids in rosters.values_mut() {
        ids.sort_unstable();
    }
    let fractions: BTreeMap<GroupId, f64> = rosters
        .keys()
        .map(|g| (g.clone(), cfg.fraction_for(g)))
        .collect();
    let by_id: BTreeMap<u32, &ClientSpec<T>> =
        clients.iter().map(|c| (c.client_id, c)).collect();

    let initial = GlobalState {
        round: 0,
        models: models.clone(),
    };
    observer(&initial);
    let mut history = vec![initial];
    let mut metrics = Vec::new();
    let mut warnings = Vec::new();
    let mut skipped_groups = Vec::new();
    // Warm Adam moments per client, kept only when the per-round reset is
    // disabled.
    let mut adam_states: BTreeMap<u32, AdamState<T>> = BTreeMap::new();
    let keep_adam = !cfg.adam_reset && cfg.optimizer == OptimizerKind::Adam;

    for round in 1..=cfg.rounds {
        let round_start = Instant::now();
        let sampled = sample_clients(&rosters, &fractions, derive(master_seed, "sample", &[round as u64]))?;

        // Dispatch longest-data-first so parallel workers pack well; result
        // order is irrelevant because aggregation sorts by client id.
        let mut tasks: Vec<(&ClientSpec<T>, Option<AdamState<T>>)> = Vec::new();
        for ids in sampled.values() {
            for id in ids {
                let spec = by_id[id];
                let warm = if keep_adam {
                    adam_states.remove(id)
                } else {
                    None
                };
                tasks.push((spec, warm));
            }
        }
        tasks.sort_by(|a, b| {
            b.0.data
                .len()
                .cmp(&a.0.data.len())
                .then(a.0.client_id.cmp(&b.0.client_id))
        });

        let results: Result<Vec<(LocalOutcome<T>, Option<AdamState<T>>)>> = tasks
            .into_par_iter()
            .map(|(spec, warm)| {
                let seed = derive(master_seed, "client", &[round as u64, spec.client_id as u64]);
                let global = &models[&spec.group];
                let mut warm = warm.or_else(|| {
                    keep_adam.then(|| AdamState::new(global, cfg.eta))
                });
                let outcome = client_update(
                    global,
                    &spec.data,
                    cfg,
                    spec.client_id,
                    &spec.group,
                    round,
                    seed,
                    warm.as_mut(),
                )?;
                Ok((outcome, warm))
            })
            .collect();
        let results = results?;

        let mut updates = Vec::with_capacity(results.len());
        let mut group_losses: BTreeMap<GroupId, (f64, usize)> = BTreeMap::new();
        for (outcome, warm) in results {
            if let Some(n) = outcome.stats.clamped_batch_to {
                warnings.push(format!(
                    "round {round}: client {} batch clamped to {n}",
                    outcome.update.client_id
                ));
            }
            if let Some(state) = warm {
                adam_states.insert(outcome.update.client_id, state);
            }
            let entry = group_losses
                .entry(outcome.update.group.clone())
                .or_insert((0.0, 0));
            entry.0 += outcome.stats.mean_total_loss;
            entry.1 += 1;
            updates.push(outcome.update);
        }

        match cfg.strategy {
            Strategy::FtlTp => {
                let (next, skipped) = aggregate_ftl_tp(&updates, &models, cfg.base_cut)?;
                for g in skipped {
                    skipped_groups.push((round, g));
                }
                models = next;
            }
            _ => {
                for (group, model) in models.iter_mut() {
                    let group_updates: Vec<_> = updates
                        .iter()
                        .filter(|u| &u.group == group)
                        .cloned()
                        .collect();
                    if group_updates.is_empty() {
                        skipped_groups.push((round, group.clone()));
                        continue;
                    }
                    *model = aggregate_fedavg(&group_updates)?;
                }
            }
        }

        let wall_ms = round_start.elapsed().as_secs_f64() * 1e3;
        for (group, model) in &models {
            let train_loss = group_losses
                .get(group)
                .map(|(sum, n)| if *n > 0 { sum / *n as f64 } else { f64::NAN })
                .unwrap_or(f64::NAN);
            let target_accuracy = match eval.get(group) {
                Some(samples) => samples.accuracy(model)?,
                None => f64::NAN,
            };
            metrics.push(RoundMetrics {
                round,
                group: group.to_string(),
                train_loss,
                target_accuracy,
                wall_ms,
            });
        }

        let state = GlobalState {
            round,
            models: models.clone(),
        };
        observer(&state);
        if keep_history || round == cfg.rounds {
            history.push(state);
        }
    }

    Ok(FederationRun {
        history,
        metrics,
        warnings,
        skipped_groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Samples;
    use crate::fl::Strategy;
    use crate::nn::{loss_and_grad, sgd_step, Minibatch};

    fn toy_clients(groups: &[(&str, usize, u32)]) -> Vec<ClientSpec<f64>> {
        // groups: (name, num_classes, clients)
        let mut out = Vec::new();
        let mut id = 0;
        for (gi, (name, classes, count)) in groups.iter().enumerate() {
            for k in 0..*count {
                let n = 12;
                let features: Vec<f64> = (0..n * 5)
                    .map(|i| {
                        let v = ((i * 13 + k as usize * 7 + gi * 29) % 23) as f64;
                        v * 0.1 - 1.1
                    })
                    .collect();
                let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
                out.push(ClientSpec {
                    client_id: id,
                    group: GroupId::new(*name),
                    data: Samples::new(features, labels, 5, *classes).unwrap(),
                });
                id += 1;
            }
        }
        out
    }

    fn small_cfg(strategy: Strategy) -> StrategyConfig {
        let mut cfg = StrategyConfig::for_strategy(strategy);
        cfg.hidden = vec![6, 4];
        cfg.base_cut = 1;
        cfg.rounds = 3;
        cfg.batch_size = 4;
        cfg.eta = 0.01;
        cfg
    }

    #[test]
    fn zero_rounds_history_is_initial_only() {
        let clients = toy_clients(&[("a", 2, 2)]);
        let mut cfg = small_cfg(Strategy::FedAvg);
        cfg.mu = 0.0;
        cfg.alpha_l2r = 0.0;
        cfg.rounds = 0;
        let run = run_federation(&cfg, &clients, &BTreeMap::new(), 5).unwrap();
        assert_eq!(run.history.len(), 1);
        assert_eq!(run.history[0].round, 0);
        assert!(run.metrics.is_empty());
    }

    #[test]
    fn ftl_tp_base_segments_stay_identical() {
        let clients = toy_clients(&[("a", 2, 3), ("b", 3, 2)]);
        let cfg = small_cfg(Strategy::FtlTp);
        let mut checked = 0;
        let run = run_federation_with(&cfg, &clients, &BTreeMap::new(), 7, false, |state| {
            assert!(state.base_segments_identical(1), "round {}", state.round);
            checked += 1;
        })
        .unwrap();
        assert_eq!(checked, 4);
        assert!(run.final_state().base_segments_identical(1));
    }

    #[test]
    fn federation_is_deterministic() {
        let clients = toy_clients(&[("a", 2, 3), ("b", 3, 2)]);
        let cfg = small_cfg(Strategy::FtlTp);
        let a = run_federation(&cfg, &clients, &BTreeMap::new(), 11).unwrap();
        let b = run_federation(&cfg, &clients, &BTreeMap::new(), 11).unwrap();
        for (ga, gb) in a
            .final_state()
            .models
            .values()
            .zip(b.final_state().models.values())
        {
            assert!(ga.bits_eq(gb));
        }
    }

    #[test]
    fn one_step_fedavg_equals_centralized_gradient_step() {
        // C=1, E=1, full batch, SGD, one round: the aggregated model must
        // equal one centralized GD step on the pooled data.
        let clients = toy_clients(&[("a", 2, 3)]);
        let mut cfg = small_cfg(Strategy::FedAvg);
        cfg.mu = 0.0;
        cfg.alpha_l2r = 0.0;
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.local_epochs = 1;
        cfg.batch_size = usize::MAX - 1;
        cfg.rounds = 1;
        cfg.eta = 0.05;
        // All clients have equal data sizes (12 each).
        let run = run_federation(&cfg, &clients, &BTreeMap::new(), 3).unwrap();
        let aggregated = &run.final_state().models[&GroupId::new("a")];

        let initial = &run.history[0].models[&GroupId::new("a")];
        let pooled = Samples::concat(clients.iter().map(|c| &c.data)).unwrap();
        let batch = Minibatch::new(pooled.features.clone(), pooled.labels.clone(), 5).unwrap();
        let (_, grads) = loss_and_grad(initial, initial, &batch, 0.0, 0.0).unwrap();
        let expected = sgd_step(initial, &grads, 0.05).unwrap();
        for (a, b) in aggregated.iter_params().zip(expected.iter_params()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn metrics_cover_rounds_times_groups() {
        let clients = toy_clients(&[("a", 2, 2), ("b", 3, 2)]);
        let cfg = small_cfg(Strategy::FtlTp);
        let mut eval = BTreeMap::new();
        eval.insert(GroupId::new("a"), clients[0].data.clone());
        eval.insert(GroupId::new("b"), clients[2].data.clone());
        let run = run_federation(&cfg, &clients, &eval, 13).unwrap();
        assert_eq!(run.metrics.len(), 3 * 2);
        assert!(run.metrics.iter().all(|m| m.target_accuracy.is_finite()));
        assert!(run.metrics.iter().all(|m| m.train_loss.is_finite()));
    }
}
