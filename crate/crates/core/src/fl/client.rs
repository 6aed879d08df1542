//! Client-side local update.

use crate::data::Samples;
use crate::error::Result;
use crate::nn::{train_local, AdamState, ModelParams, TrainOptions, TrainStats};
use crate::scalar::Scalar;

use super::{ClientUpdate, GroupId, StrategyConfig};

/// A client update plus local training statistics (the stats never leave
/// the client in networked mode).
#[derive(Debug, Clone)]
pub struct LocalOutcome<T> {
    pub update: ClientUpdate<T>,
    pub stats: TrainStats,
}

/// Run one round of local training from the received global model:
/// `E` epochs of shuffled minibatches minimizing the strategy's objective,
/// anchored at the received model. Returns the updated parameters and
/// `n_k = |local_data|`. Deterministic per seed.
///
/// `warm_adam` carries optimizer moments across rounds when the
/// configuration disables the per-round Adam reset.
pub fn client_update<T: Scalar>(
    global: &ModelParams<T>,
    local_data: &Samples<T>,
    cfg: &StrategyConfig,
    client_id: u32,
    group: &GroupId,
    round: u32,
    seed: u64,
    warm_adam: Option<&mut AdamState<T>>,
) -> Result<LocalOutcome<T>> {
    let (mu, alpha_l2r) = cfg.penalties();
    let opts = TrainOptions {
        epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
        eta: cfg.eta,
        mu,
        alpha_l2r,
        optimizer: cfg.optimizer,
        freeze_below: 0,
    };
    let mut params = global.clone();
    let stats = train_local(
        &mut params,
        global,
        &local_data.features,
        &local_data.labels,
        local_data.dim,
        &opts,
        seed,
        warm_adam,
    )
    .map_err(|e| e.for_client(client_id))?;
    Ok(LocalOutcome {
        update: ClientUpdate {
            client_id,
            group: group.clone(),
            params,
            n_k: local_data.len() as u64,
            round,
        },
        stats,
    })
}
