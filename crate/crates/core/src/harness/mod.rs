//! Deterministic experiment orchestration: target-domain sweeps with the
//! two-stage mean/std protocol, client-fraction sweeps, and the wall-clock
//! comparison of one dual-group run against summed single-group runs.

pub mod report;
pub mod sweep;
pub mod timing;
pub mod trial;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::data::{
    default_group_m, default_group_s, GroupSpec, UNBALANCED_WEIGHTS_LARGE,
    UNBALANCED_WEIGHTS_SMALL,
};
use crate::error::{CoreError, Result};
use crate::fl::{Strategy, StrategyConfig};

pub use report::{report, ReportTable};
pub use sweep::{run_fraction_sweep, run_target_sweep, CombinationAgg, FractionRow, SweepResult};
pub use timing::{run_timing, TimingReport, TimingRow};
pub use trial::{run_trial, TrialResult};

/// What a trial trains and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx,
    #[serde(rename = "fedl2r")]
    FedL2r,
    #[serde(rename = "ftl-tp")]
    FtlTp,
    #[serde(rename = "il")]
    Il,
    #[serde(rename = "cl")]
    Cl,
    #[serde(rename = "ctl")]
    Ctl,
}

impl Method {
    pub fn as_strategy(self) -> Option<Strategy> {
        match self {
            Method::FedAvg => Some(Strategy::FedAvg),
            Method::FedProx => Some(Strategy::FedProx),
            Method::FedL2r => Some(Strategy::FedL2R),
            Method::FtlTp => Some(Strategy::FtlTp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::FedL2r => "fedl2r",
            Method::FtlTp => "ftl-tp",
            Method::Il => "il",
            Method::Cl => "cl",
            Method::Ctl => "ctl",
        }
    }
}

/// Generator knobs shared by both groups of an experiment (everything in
/// [`crate::data::ShiftSpec`] except identity and seeds).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ShiftProfile {
    #[serde(default = "d_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "d_subspace_dim")]
    pub subspace_dim: usize,
    #[serde(default = "d_class_sep")]
    pub class_sep: f64,
    #[serde(default = "d_within")]
    pub within_scale: f64,
    #[serde(default = "d_offset")]
    pub offset_scale: f64,
    #[serde(default = "d_nuisance_dim")]
    pub nuisance_dim: usize,
    #[serde(default = "d_nuisance")]
    pub nuisance_scale: f64,
    #[serde(default = "d_noise")]
    pub noise_scale: f64,
}

fn d_feature_dim() -> usize {
    624
}
fn d_subspace_dim() -> usize {
    16
}
fn d_class_sep() -> f64 {
    3.0
}
fn d_within() -> f64 {
    1.0
}
fn d_offset() -> f64 {
    2.5
}
fn d_nuisance_dim() -> usize {
    24
}
fn d_nuisance() -> f64 {
    1.5
}
fn d_noise() -> f64 {
    0.5
}

impl Default for ShiftProfile {
    fn default() -> Self {
        Self {
            feature_dim: d_feature_dim(),
            subspace_dim: d_subspace_dim(),
            class_sep: d_class_sep(),
            within_scale: d_within(),
            offset_scale: d_offset(),
            nuisance_dim: d_nuisance_dim(),
            nuisance_scale: d_nuisance(),
            noise_scale: d_noise(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMode {
    #[default]
    Balanced,
    Unbalanced,
}

/// How a group is sharded when the experiment runs unbalanced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPartition {
    /// "all": skewed weights on every training domain; "one": skewed
    /// weights on the first training domain only.
    pub scheme: UnbalancedScheme,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnbalancedScheme {
    All,
    One,
}

impl GroupPartition {
    pub fn large_all() -> Self {
        Self {
            scheme: UnbalancedScheme::All,
            weights: UNBALANCED_WEIGHTS_LARGE.to_vec(),
        }
    }

    pub fn small_one() -> Self {
        Self {
            scheme: UnbalancedScheme::One,
            weights: UNBALANCED_WEIGHTS_SMALL.to_vec(),
        }
    }
}

/// Full description of one experiment (JSON-serializable; the CLI's
/// `--config` schema).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default = "default_group_m")]
    pub group_a: GroupSpec,
    #[serde(default = "default_group_s")]
    pub group_b: GroupSpec,
    /// Target (held-out) domain of group A; accuracy is reported against it.
    pub target_a: String,
    /// Target domain of group B. Sweeps iterate all choices; single runs
    /// use this value (default: the last domain of group B).
    #[serde(default)]
    pub target_b: Option<String>,
    #[serde(default = "default_strategy_cfg")]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default)]
    pub master_seed: u64,
    /// Dataset stream; fixed across repeats so every repeat sees the same
    /// data and only the model randomness varies.
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    /// Shared feature-space stream; groups with equal values share their
    /// discriminative subspace.
    #[serde(default = "default_subspace_seed")]
    pub subspace_seed: u64,
    #[serde(default)]
    pub shift: ShiftProfile,
    #[serde(default)]
    pub partition_mode: BalanceMode,
    #[serde(default = "GroupPartition::large_all")]
    pub partition_a: GroupPartition,
    #[serde(default = "GroupPartition::small_one")]
    pub partition_b: GroupPartition,
}

fn default_strategy_cfg() -> StrategyConfig {
    StrategyConfig::for_strategy(Strategy::FtlTp)
}
fn default_repeats() -> u32 {
    5
}
fn default_data_seed() -> u64 {
    7001
}
fn default_subspace_seed() -> u64 {
    9001
}

impl ExperimentConfig {
    /// The benchmark default: FTL-TP on the M+S pairing with the last
    /// domain of each group held out.
    pub fn default_m_s(method: Method) -> Self {
        let group_a = default_group_m();
        let group_b = default_group_s();
        let mut strategy = default_strategy_cfg();
        if let Some(s) = method.as_strategy() {
            strategy = StrategyConfig::for_strategy(s);
        }
        Self {
            method,
            target_a: group_a.domains.last().expect("nonempty").name.clone(),
            target_b: None,
            group_a,
            group_b,
            strategy,
            baseline: BaselineConfig::default(),
            repeats: default_repeats(),
            master_seed: 0,
            data_seed: default_data_seed(),
            subspace_seed: default_subspace_seed(),
            shift: ShiftProfile::default(),
            partition_mode: BalanceMode::Balanced,
            partition_a: GroupPartition::large_all(),
            partition_b: GroupPartition::small_one(),
        }
    }

    pub fn effective_target_b(&self) -> String {
        self.target_b.clone().unwrap_or_else(|| {
            self.group_b
                .domains
                .last()
                .map(|d| d.name.clone())
                .unwrap_or_default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_a.name == self.group_b.name {
            return Err(CoreError::InvalidConfig(
                "paired groups must be distinct".into(),
            ));
        }
        let pair = (self.group_a.name.as_str(), self.group_b.name.as_str());
        if pair == ("S", "T") || pair == ("T", "S") {
            return Err(CoreError::InvalidConfig(
                "groups S and T carry the same signals and are never paired".into(),
            ));
        }
        if !self.group_a.domains.iter().any(|d| d.name == self.target_a) {
            return Err(CoreError::InvalidConfig(format!(
                "target_a {:?} is not a domain of group {}",
                self.target_a, self.group_a.name
            )));
        }
        if let Some(tb) = &self.target_b {
            if !self.group_b.domains.iter().any(|d| d.name == *tb) {
                return Err(CoreError::InvalidConfig(format!(
                    "target_b {tb:?} is not a domain of group {}",
                    self.group_b.name
                )));
            }
        }
        if self.repeats == 0 {
            return Err(CoreError::InvalidConfig("repeats must be >= 1".into()));
        }
        if self.group_a.domains.len() < 2 || self.group_b.domains.len() < 2 {
            return Err(CoreError::InvalidConfig(
                "each group needs at least two domains (one source, one target)".into(),
            ));
        }
        self.strategy.validate()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CoreError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::InvalidConfig(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_roundtrips() {
        let cfg = ExperimentConfig::default_m_s(Method::FtlTp);
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn s_and_t_cannot_be_paired() {
        let mut cfg = ExperimentConfig::default_m_s(Method::FtlTp);
        cfg.group_a = crate::data::default_group_t();
        cfg.target_a = "DMGD".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn identical_groups_rejected() {
        let mut cfg = ExperimentConfig::default_m_s(Method::FtlTp);
        cfg.group_b = cfg.group_a.clone();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_target_rejected() {
        let mut cfg = ExperimentConfig::default_m_s(Method::FtlTp);
        cfg.target_a = "Nope".into();
        assert!(cfg.validate().is_err());
    }
}
