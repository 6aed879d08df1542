//! The client daemon: subscribes to its queue, trains on each received
//! model, and publishes the update tagged with its domain group.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use fedtp_core::data::{load_csv, load_csv_with_dim};
use fedtp_core::fl::{client_update, GroupId};
use fedtp_core::nn::AdamState;
use fedtp_core::seed::derive;
use fedtp_core::{Real, Table};

use crate::broker::{EXCHANGE_TO_CLIENTS, EXCHANGE_TO_SERVER};
use crate::client_api::BrokerClient;
use crate::codec::{Sender, WeightMessage, WireModel};
use crate::error::{NetError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientNodeConfig {
    pub broker_addr: String,
    pub username: String,
    pub password: String,
    pub client_id: u32,
    pub group: String,
    pub data_path: PathBuf,
    /// Expected feature width of the data file (defaults to the standard
    /// 624-column schema).
    #[serde(default)]
    pub feature_dim: Option<usize>,
    /// Give up when no model arrives for this long.
    #[serde(default = "default_idle_secs")]
    pub idle_timeout_secs: u64,
}

fn default_idle_secs() -> u64 {
    300
}

impl ClientNodeConfig {
    pub fn queue_name(&self) -> String {
        format!("client-{}", self.client_id)
    }
}

#[derive(Debug, Default)]
pub struct ClientNodeReport {
    pub rounds_seen: u32,
    pub updates_published: u32,
    pub duplicates_ignored: u32,
    pub stale_ignored: u32,
}

/// Run the daemon until the configured number of rounds completes (learned
/// from the hyper-parameters the server attaches to every model message).
pub fn client_node(cfg: &ClientNodeConfig) -> Result<ClientNodeReport> {
    let dataset = match cfg.feature_dim {
        Some(dim) => load_csv_with_dim::<Real>(&cfg.data_path, dim, None)?,
        None => load_csv::<Real>(&cfg.data_path, None)?,
    };
    let mut data: Table = dataset.data;
    let group = GroupId::new(&cfg.group);

    let mut broker = BrokerClient::connect(&cfg.broker_addr, &cfg.username, &cfg.password)?;
    let queue = cfg.queue_name();
    broker.declare_queue(&queue)?;
    broker.bind(EXCHANGE_TO_CLIENTS, &queue, group.as_str())?;
    broker.subscribe(&queue)?;

    let idle = Duration::from_secs(cfg.idle_timeout_secs.max(1));
    let mut report = ClientNodeReport::default();
    let mut last_done: Option<u32> = None;
    let mut warm_adam: Option<AdamState<Real>> = None;

    loop {
        let delivery = broker.next_delivery(idle).map_err(|e| match e {
            NetError::Timeout(_) => NetError::Timeout(format!(
                "client {}: no model received for {}s",
                cfg.client_id, cfg.idle_timeout_secs
            )),
            other => other,
        })?;
        let msg = delivery.message;
        if msg.sender != Sender::Server {
            broker.ack(delivery.delivery_id)?;
            continue;
        }
        // Round-stamped dedup: at-least-once delivery may replay a round we
        // already handled; republishing would double-count us at the server.
        if last_done.map(|r| msg.round <= r).unwrap_or(false) {
            report.duplicates_ignored += 1;
            broker.ack(delivery.delivery_id)?;
            continue;
        }
        let hp = match msg.hyperparams {
            Some(hp) => hp,
            None => {
                report.stale_ignored += 1;
                broker.ack(delivery.delivery_id)?;
                continue;
            }
        };
        let total_rounds = hp.strategy.rounds;

        if hp.sampled.contains(&cfg.client_id) {
            let global = msg.payload.into_model()?;
            if data.num_classes != global.num_classes() {
                // The model defines the label space; the shard may simply
                // not contain the top class.
                if data.labels.iter().any(|&l| l >= global.num_classes()) {
                    return Err(NetError::Codec(format!(
                        "client {}: labels exceed model classes",
                        cfg.client_id
                    )));
                }
                data.num_classes = global.num_classes();
            }
            let keep_adam = !hp.strategy.adam_reset
                && hp.strategy.optimizer == fedtp_core::nn::OptimizerKind::Adam;
            if keep_adam && warm_adam.is_none() {
                warm_adam = Some(AdamState::new(&global, hp.strategy.eta));
            }
            let seed = derive(
                hp.master_seed,
                "client",
                &[msg.round as u64, cfg.client_id as u64],
            );
            let outcome = client_update(
                &global,
                &data,
                &hp.strategy,
                cfg.client_id,
                &group,
                msg.round,
                seed,
                if keep_adam { warm_adam.as_mut() } else { None },
            )?;
            let reply = WeightMessage {
                round: msg.round,
                routing_key: group.to_string(),
                sender: Sender::Client(cfg.client_id),
                n_k: Some(outcome.update.n_k),
                payload: WireModel::from_model(&outcome.update.params),
                hyperparams: None,
            };
            broker.publish(EXCHANGE_TO_SERVER, group.as_str(), reply)?;
            report.updates_published += 1;
        }
        last_done = Some(msg.round);
        report.rounds_seen += 1;
        // Publish-then-ack: a crash before the ack redelivers the round,
        // and the dedup above keeps effects exactly-once.
        broker.ack(delivery.delivery_id)?;

        if msg.round >= total_rounds {
            return Ok(report);
        }
    }
}
