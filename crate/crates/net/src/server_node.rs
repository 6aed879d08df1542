//! The server node: drives a full federation over the broker.
//!
//! Per round it publishes each group's model (tagged with the group's
//! routing key) to the `to-clients` exchange, collects the sampled clients'
//! updates from the server queue, aggregates exactly as the in-process
//! simulator does, and finally persists per-group checkpoints. Seeds and
//! summation order match the simulator, so the resulting checkpoints are
//! bit-identical to a simulated run of the same configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use fedtp_core::fl::{
    aggregate_fedavg, aggregate_ftl_tp, init_global_models, sample_clients, ClientUpdate,
    GroupId, GroupModelSpec, RoundMetrics, Strategy, StrategyConfig,
};
use fedtp_core::metrics::write_round_metrics_csv;
use fedtp_core::nn::save_checkpoint;
use fedtp_core::seed::derive;
use fedtp_core::{Model, Real};

use crate::broker::{EXCHANGE_TO_CLIENTS, EXCHANGE_TO_SERVER};
use crate::client_api::BrokerClient;
use crate::codec::{Sender, ServerHyperparams, WeightMessage, WireModel};
use crate::error::{NetError, Result};

pub const SERVER_QUEUE: &str = "server-queue";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RosterEntry {
    pub client_id: u32,
    pub group: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServerNodeConfig {
    pub broker_addr: String,
    pub username: String,
    pub password: String,
    pub roster: Vec<RosterEntry>,
    /// Model shape per group (feature dim and class count).
    pub groups: Vec<GroupModelSpec>,
    pub strategy: StrategyConfig,
    pub master_seed: u64,
    #[serde(default = "default_timeout_secs")]
    pub round_timeout_secs: u64,
    pub checkpoint_dir: PathBuf,
    #[serde(default)]
    pub metrics_path: Option<PathBuf>,
}

fn default_timeout_secs() -> u64 {
    60
}

impl ServerNodeConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| NetError::Codec(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.roster.is_empty() {
            return Err(NetError::Broker("empty roster".into()));
        }
        let mut ids = BTreeSet::new();
        for entry in &self.roster {
            if !ids.insert(entry.client_id) {
                return Err(NetError::Broker(format!(
                    "client id {} appears twice in the roster",
                    entry.client_id
                )));
            }
            if !self.groups.iter().any(|g| g.group.as_str() == entry.group) {
                return Err(NetError::Broker(format!(
                    "roster client {} names unknown group {}",
                    entry.client_id, entry.group
                )));
            }
        }
        Ok(())
    }
}

/// Run the federation to completion and return the final per-group models
/// (also written as checkpoints).
pub fn server_node(cfg: &ServerNodeConfig) -> Result<BTreeMap<GroupId, Model>> {
    cfg.validate()?;
    let mut broker = BrokerClient::connect(&cfg.broker_addr, &cfg.username, &cfg.password)?;
    broker.declare_queue(SERVER_QUEUE)?;
    for g in &cfg.groups {
        broker.bind(EXCHANGE_TO_SERVER, SERVER_QUEUE, g.group.as_str())?;
    }
    broker.subscribe(SERVER_QUEUE)?;

    let mut models: BTreeMap<GroupId, Model> =
        init_global_models::<Real>(&cfg.strategy, &cfg.groups, cfg.master_seed)?;

    let mut rosters: BTreeMap<GroupId, Vec<u32>> = BTreeMap::new();
    for entry in &cfg.roster {
        rosters
            .entry(GroupId::new(&entry.group))
            .or_default()
            .push(entry.client_id);
    }
    for ids in rosters.values_mut() {
        ids.sort_unstable();
    }
    let fractions: BTreeMap<GroupId, f64> = rosters
        .keys()
        .map(|g| (g.clone(), cfg.strategy.fraction_for(g)))
        .collect();
    let group_of: BTreeMap<u32, GroupId> = cfg
        .roster
        .iter()
        .map(|e| (e.client_id, GroupId::new(&e.group)))
        .collect();

    let timeout = Duration::from_secs(cfg.round_timeout_secs.max(1));
    let mut metrics: Vec<RoundMetrics> = Vec::new();

    for round in 1..=cfg.strategy.rounds {
        let round_start = Instant::now();
        let sampled = sample_clients(
            &rosters,
            &fractions,
            derive(cfg.master_seed, "sample", &[round as u64]),
        )?;

        let broadcast = |broker: &mut BrokerClient| -> Result<()> {
            for (group, model) in &models {
                let message = WeightMessage {
                    round,
                    routing_key: group.to_string(),
                    sender: Sender::Server,
                    n_k: None,
                    payload: WireModel::from_model(model),
                    hyperparams: Some(ServerHyperparams {
                        strategy: cfg.strategy.clone(),
                        master_seed: cfg.master_seed,
                        sampled: sampled.get(group).cloned().unwrap_or_default(),
                    }),
                };
                broker.publish(EXCHANGE_TO_CLIENTS, group.as_str(), message)?;
            }
            Ok(())
        };
        broadcast(&mut broker)?;

        let expected: BTreeSet<u32> = sampled.values().flatten().copied().collect();
        let mut received: BTreeMap<u32, ClientUpdate<Real>> = BTreeMap::new();
        let mut retried = false;
        let mut deadline = Instant::now() + timeout;
        while received.len() < expected.len() {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let delivery = if remaining.is_zero() {
                Err(NetError::Timeout("client updates".into()))
            } else {
                broker.next_delivery(remaining)
            };
            match delivery {
                Ok(delivery) => {
                    let msg = delivery.message;
                    broker.ack(delivery.delivery_id)?;
                    let client_id = match msg.sender {
                        Sender::Client(id) => id,
                        Sender::Server => continue,
                    };
                    if msg.round != round {
                        // Stale or duplicate round: at-least-once delivery
                        // makes this legal; drop it.
                        continue;
                    }
                    if !expected.contains(&client_id) || received.contains_key(&client_id) {
                        continue;
                    }
                    let group = match group_of.get(&client_id) {
                        Some(g) if g.as_str() == msg.routing_key => g.clone(),
                        _ => continue,
                    };
                    let n_k = msg.n_k.ok_or_else(|| {
                        NetError::Codec(format!("update from client {client_id} lacks n_k"))
                    })?;
                    let params = msg.payload.into_model()?;
                    received.insert(
                        client_id,
                        ClientUpdate {
                            client_id,
                            group,
                            params,
                            n_k,
                            round,
                        },
                    );
                }
                Err(NetError::Timeout(_)) if !retried => {
                    // One retry: re-publish this round's models and wait a
                    // fresh timeout for the stragglers.
                    retried = true;
                    broadcast(&mut broker)?;
                    deadline = Instant::now() + timeout;
                }
                Err(NetError::Timeout(_)) => {
                    let missing: Vec<u32> = expected
                        .iter()
                        .filter(|id| !received.contains_key(id))
                        .copied()
                        .collect();
                    return Err(NetError::RoundFailed {
                        round,
                        msg: format!("missing updates from clients {missing:?} after retry"),
                    });
                }
                Err(e) => return Err(e),
            }
        }

        let updates: Vec<ClientUpdate<Real>> = received.into_values().collect();
        match cfg.strategy.strategy {
            Strategy::FtlTp => {
                let (next, _skipped) = aggregate_ftl_tp(&updates, &models, cfg.strategy.base_cut)?;
                models = next;
            }
            _ => {
                for (group, model) in models.iter_mut() {
                    let group_updates: Vec<_> = updates
                        .iter()
                        .filter(|u| &u.group == group)
                        .cloned()
                        .collect();
                    if !group_updates.is_empty() {
                        *model = aggregate_fedavg(&group_updates)?;
                    }
                }
            }
        }

        let wall_ms = round_start.elapsed().as_secs_f64() * 1e3;
        for group in models.keys() {
            metrics.push(RoundMetrics {
                round,
                group: group.to_string(),
                train_loss: f64::NAN,
                target_accuracy: f64::NAN,
                wall_ms,
            });
        }
    }

    std::fs::create_dir_all(&cfg.checkpoint_dir)?;
    for (group, model) in &models {
        let path = cfg.checkpoint_dir.join(format!("{group}.ckpt"));
        save_checkpoint(&path, model)?;
    }
    if let Some(path) = &cfg.metrics_path {
        write_round_metrics_csv(path, &metrics)?;
    }
    Ok(models)
}
