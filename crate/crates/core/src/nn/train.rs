//! Minibatch training loop shared by federated clients and the
//! non-federated baselines.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::loss::loss_and_grad;
use crate::nn::optim::{sgd_step_in_place, AdamState};
use crate::nn::params::{Minibatch, ModelParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: u32,
    pub batch_size: usize,
    pub eta: f64,
    pub mu: f64,
    pub alpha_l2r: f64,
    pub optimizer: OptimizerKind,
    /// Layers with index below this are frozen: their gradient entries are
    /// forced (and asserted) to zero before every optimizer step.
    pub freeze_below: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 8,
            eta: 0.0005,
            mu: 0.0,
            alpha_l2r: 0.0,
            optimizer: OptimizerKind::Adam,
            freeze_below: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    pub mean_total_loss: f64,
    pub mean_data_loss: f64,
    pub batches: u64,
    /// Set when the requested batch size exceeded the dataset and was
    /// clamped down; carries the effective size.
    pub clamped_batch_to: Option<usize>,
}

/// Train `params` in place on `(inputs, labels)` for `opts.epochs` epochs of
/// shuffled minibatches, minimizing the composite objective anchored at
/// `anchor`. Deterministic for a fixed seed. When `warm_adam` is provided
/// (and the optimizer is Adam) moments persist across calls; otherwise the
/// optimizer state starts fresh.
pub fn train_local<T: Scalar>(
    params: &mut ModelParams<T>,
    anchor: &ModelParams<T>,
    inputs: &[T],
    labels: &[usize],
    in_dim: usize,
    opts: &TrainOptions,
    seed: u64,
    mut warm_adam: Option<&mut AdamState<T>>,
) -> Result<TrainStats> {
    let n = labels.len();
    if n == 0 {
        return Err(CoreError::Empty("training data".into()));
    }
    if inputs.len() != n * in_dim {
        return Err(CoreError::DimMismatch(format!(
            "training storage {} != {} rows x {} features",
            inputs.len(),
            n,
            in_dim
        )));
    }
    if opts.freeze_below > params.layers.len() {
        return Err(CoreError::InvalidConfig(format!(
            "freeze_below {} exceeds {} layers",
            opts.freeze_below,
            params.layers.len()
        )));
    }
    let mut stats = TrainStats::default();
    let batch_size = if opts.batch_size > n {
        stats.clamped_batch_to = Some(n);
        n
    } else {
        opts.batch_size.max(1)
    };

    let mut fresh_adam = match (opts.optimizer, &warm_adam) {
        (OptimizerKind::Adam, None) => Some(AdamState::new(params, opts.eta)),
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut total_sum = 0.0;
    let mut data_sum = 0.0;
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let mut x = Vec::with_capacity(chunk.len() * in_dim);
            let mut y = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                x.extend_from_slice(&inputs[idx * in_dim..(idx + 1) * in_dim]);
                y.push(labels[idx]);
            }
            let batch = Minibatch::new(x, y, in_dim)?;
            let (terms, mut grads) =
                loss_and_grad(params, anchor, &batch, opts.mu, opts.alpha_l2r)?;
            if opts.freeze_below > 0 {
                for layer in grads.layers[..opts.freeze_below].iter_mut() {
                    layer.weights.iter_mut().for_each(|g| *g = T::zero());
                    layer.bias.iter_mut().for_each(|g| *g = T::zero());
                }
                assert!(
                    grads.layers[..opts.freeze_below]
                        .iter()
                        .all(|l| l.weights.iter().chain(l.bias.iter()).all(|g| g.is_zero())),
                    "frozen layers must have zero gradient"
                );
            }
            match opts.optimizer {
                OptimizerKind::Adam => {
                    let state = match warm_adam.as_deref_mut() {
                        Some(s) => s,
                        None => fresh_adam.as_mut().expect("fresh adam state"),
                    };
                    state.step(params, &grads)?;
                }
                OptimizerKind::Sgd => sgd_step_in_place(params, &grads, opts.eta)?,
            }
            total_sum += terms.total.as_f64();
            data_sum += terms.data_loss.as_f64();
            stats.batches += 1;
        }
    }
    if stats.batches > 0 {
        stats.mean_total_loss = total_sum / stats.batches as f64;
        stats.mean_data_loss = data_sum / stats.batches as f64;
    }
    Ok(stats)
}
