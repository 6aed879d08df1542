//! Federated learning strategies: client sampling, local updates, and
//! server-side aggregation for FedAvg, FedProx, FedL2R and FTL-TP.

pub mod aggregate;
pub mod client;
pub mod federation;
pub mod sampling;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{init_kaiming, mlp_spec, ModelParams, OptimizerKind};
use crate::scalar::Scalar;
use crate::seed::derive_str;

pub use aggregate::{aggregate_fedavg, aggregate_ftl_tp};
pub use client::{client_update, LocalOutcome};
pub use federation::{
    run_federation, run_federation_with, ClientSpec, FederationRun, GlobalState, RoundMetrics,
};
pub use sampling::sample_clients;

/// Name of a domain group (a dataset family sharing one classification
/// task, e.g. "M", "S", "T").
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub String);

impl GroupId {
    pub fn new(name: impl Into<String>) -> Self {
        GroupId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GroupId {
    fn from(s: &str) -> Self {
        GroupId(s.to_string())
    }
}

/// A client's post-training parameters plus its sample count and group tag.
#[derive(Debug, Clone)]
pub struct ClientUpdate<T> {
    pub client_id: u32,
    pub group: GroupId,
    pub params: ModelParams<T>,
    pub n_k: u64,
    pub round: u32,
}

impl<T: Scalar> ClientUpdate<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_k == 0 {
            return Err(CoreError::InvalidConfig("n_k must be >= 1".into()));
        }
        if self.round == 0 {
            return Err(CoreError::InvalidConfig("round must be >= 1".into()));
        }
        if !self.params.is_finite() {
            return Err(CoreError::NonFinite(format!(
                "update from client {}",
                self.client_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    FedAvg,
    FedProx,
    FedL2R,
    FtlTp,
}

impl Strategy {
    pub fn is_ftl_tp(self) -> bool {
        matches!(self, Strategy::FtlTp)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx => "fedprox",
            Strategy::FedL2R => "fedl2r",
            Strategy::FtlTp => "ftl-tp",
        };
        f.write_str(s)
    }
}

/// Strategy choice and the hyper-parameters of one federated run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Proximal weight.
    #[serde(default)]
    pub mu: f64,
    /// Representation-L2 weight.
    #[serde(default)]
    pub alpha_l2r: f64,
    /// Local epochs per round.
    #[serde(default = "default_epochs")]
    pub local_epochs: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Client fraction applied to every group unless overridden.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Per-group overrides of the client fraction.
    #[serde(default)]
    pub group_fractions: BTreeMap<String, f64>,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    /// Number of leading layers shared across groups.
    #[serde(default = "default_base_cut")]
    pub base_cut: usize,
    /// Hidden layer widths of the MLP.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Reset Adam moments at the start of every server round.
    #[serde(default = "default_true")]
    pub adam_reset: bool,
}

fn default_epochs() -> u32 {
    1
}
fn default_batch() -> usize {
    8
}
fn default_eta() -> f64 {
    0.0005
}
fn default_fraction() -> f64 {
    1.0
}
fn default_rounds() -> u32 {
    150
}
fn default_base_cut() -> usize {
    1
}
fn default_hidden() -> Vec<usize> {
    vec![175, 125, 50]
}
fn default_true() -> bool {
    true
}

impl StrategyConfig {
    /// Defaults for a strategy, mirroring the benchmark hyper-parameters:
    /// B=8, eta=0.0005, E=1, 150 rounds; FTL-TP uses mu=0.01 and
    /// alpha=0.001, the FedProx baseline mu=0.1, FedL2R alpha=0.01.
    pub fn for_strategy(strategy: Strategy) -> Self {
        let (mu, alpha_l2r) = match strategy {
            Strategy::FedAvg => (0.0, 0.0),
            Strategy::FedProx => (0.1, 0.0),
            Strategy::FedL2R => (0.0, 0.01),
            Strategy::FtlTp => (0.01, 0.001),
        };
        Self {
            strategy,
            mu,
            alpha_l2r,
            local_epochs: default_epochs(),
            batch_size: default_batch(),
            eta: default_eta(),
            fraction: default_fraction(),
            group_fractions: BTreeMap::new(),
            rounds: default_rounds(),
            base_cut: default_base_cut(),
            hidden: default_hidden(),
            optimizer: OptimizerKind::Adam,
            adam_reset: true,
        }
    }

    pub fn fraction_for(&self, group: &GroupId) -> f64 {
        self.group_fractions
            .get(group.as_str())
            .copied()
            .unwrap_or(self.fraction)
    }

    /// Effective penalty weights for the strategy (FedAvg forces both to
    /// zero, FedProx drops the representation penalty).
    pub fn penalties(&self) -> (f64, f64) {
        match self.strategy {
            Strategy::FedAvg => (0.0, 0.0),
            Strategy::FedProx => (self.mu, 0.0),
            Strategy::FedL2R => (self.mu, self.alpha_l2r),
            Strategy::FtlTp => (self.mu, self.alpha_l2r),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu < 0.0 || self.alpha_l2r < 0.0 {
            return Err(CoreError::InvalidConfig(
                "mu and alpha_l2r must be >= 0".into(),
            ));
        }
        match self.strategy {
            Strategy::FedAvg => {
                if self.mu != 0.0 || self.alpha_l2r != 0.0 {
                    return Err(CoreError::InvalidConfig(
                        "fedavg requires mu = alpha_l2r = 0".into(),
                    ));
                }
            }
            Strategy::FedProx => {
                if self.alpha_l2r != 0.0 {
                    return Err(CoreError::InvalidConfig(
                        "fedprox requires alpha_l2r = 0".into(),
                    ));
                }
            }
            _ => {}
        }
        if self.local_epochs == 0 {
            return Err(CoreError::InvalidConfig("local epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.eta <= 0.0 {
            return Err(CoreError::InvalidConfig("eta must be > 0".into()));
        }
        let fracs = std::iter::once(self.fraction).chain(self.group_fractions.values().copied());
        for c in fracs {
            if !(c > 0.0 && c <= 1.0) {
                return Err(CoreError::InvalidConfig(format!(
                    "client fraction {c} outside (0, 1]"
                )));
            }
        }
        if self.base_cut == 0 || self.base_cut > self.hidden.len() {
            return Err(CoreError::InvalidConfig(format!(
                "base_cut {} outside 1..={} hidden layers",
                self.base_cut,
                self.hidden.len()
            )));
        }
        Ok(())
    }
}

/// Per-group shape of the models a federation trains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupModelSpec {
    pub group: GroupId,
    pub in_dim: usize,
    pub num_classes: usize,
}

/// Initialize one model per group. The base segment is drawn once from a
/// shared stream and is therefore bit-identical across groups at round
/// zero; heads are drawn per group. The same derivation runs on the
/// simulator and on a networked server node.
pub fn init_global_models<T: Scalar>(
    cfg: &StrategyConfig,
    groups: &[GroupModelSpec],
    master_seed: u64,
) -> Result<BTreeMap<GroupId, ModelParams<T>>> {
    if groups.is_empty() {
        return Err(CoreError::Empty("group list".into()));
    }
    let mut out = BTreeMap::new();
    for spec in groups {
        let layer_spec = mlp_spec(spec.in_dim, &cfg.hidden, spec.num_classes);
        let full: ModelParams<T> = init_kaiming(
            &layer_spec,
            cfg.base_cut,
            derive_str(master_seed, "init-head", &[spec.group.as_str()], &[]),
        )?;
        let base: ModelParams<T> = init_kaiming(
            &layer_spec,
            cfg.base_cut,
            derive_str(master_seed, "init-base", &[], &[]),
        )?;
        let mut model = full;
        for (dst, src) in model.layers[..cfg.base_cut]
            .iter_mut()
            .zip(&base.layers[..cfg.base_cut])
        {
            dst.weights.clone_from(&src.weights);
            dst.bias.clone_from(&src.bias);
        }
        if out.insert(spec.group.clone(), model).is_some() {
            return Err(CoreError::InvalidConfig(format!(
                "duplicate group {}",
                spec.group
            )));
        }
    }
    Ok(out)
}
