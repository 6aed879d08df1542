//! Client partitioning of domain datasets and k-fold splits.
//!
//! Balanced mode splits every non-target domain into three near-equal,
//! class-stratified shards. Unbalanced mode applies skewed shard weights:
//! to every training domain, or to one designated domain with the rest
//! balanced. Target-domain samples never reach any client.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::seed::derive;

use super::DomainDataset;

/// Every training domain is spread over this many clients.
pub const CLIENTS_PER_DOMAIN: usize = 3;

/// Skewed shard weights for the 4-class group (30/60/110 at domain size 200).
pub const UNBALANCED_WEIGHTS_LARGE: [f64; 3] = [0.15, 0.30, 0.55];

/// Skewed shard weights for the 3-class groups (15/25/50 at domain size 90).
pub const UNBALANCED_WEIGHTS_SMALL: [f64; 3] = [15.0 / 90.0, 25.0 / 90.0, 50.0 / 90.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PartitionMode {
    Balanced,
    /// Skewed weights applied to every training domain.
    UnbalancedAll { weights: Vec<f64> },
    /// Skewed weights applied to one designated training domain; the other
    /// domains stay balanced.
    UnbalancedOne { domain: String, weights: Vec<f64> },
}

impl PartitionMode {
    pub fn is_unbalanced(&self) -> bool {
        !matches!(self, PartitionMode::Balanced)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientAssignment {
    pub client_id: u32,
    pub domain: String,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub group: String,
    pub target_domain: String,
    pub mode: String,
    /// Shards are class-stratified, not fully random draws.
    pub stratified: bool,
    pub assignments: Vec<ClientAssignment>,
}

/// Near-equal quota split of `n` into `k` parts (earlier parts get the
/// remainder).
fn near_equal(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let rem = n % k;
    (0..k).map(|i| base + usize::from(i < rem)).collect()
}

/// Integer quotas proportional to `weights` summing exactly to `n`
/// (largest-remainder rounding).
fn weighted_quotas(n: usize, weights: &[f64]) -> Result<Vec<usize>> {
    if weights.is_empty() || weights.iter().any(|&w| w <= 0.0) {
        return Err(CoreError::InvalidConfig(
            "shard weights must be positive".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut quotas: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    // Largest-remainder rounding; the remainder is always < len(weights).
    let rem: usize = n - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(rem) {
        quotas[i] += 1;
    }
    Ok(quotas)
}

/// Class-stratified split into shards of the exact `quotas` sizes: class
/// index lists are shuffled, interleaved round-robin across classes, and the
/// interleaved stream is cut sequentially. Any shard window therefore holds
/// each class within one sample of its proportional share.
fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    quotas: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    let want: usize = quotas.iter().sum();
    if want > n {
        return Err(CoreError::InvalidConfig(format!(
            "domain too small: {n} samples for requested shard total {want}"
        )));
    }
    if quotas.iter().any(|&q| q == 0) {
        return Err(CoreError::InvalidConfig(
            "domain too small: a shard quota rounded to zero".into(),
        ));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for list in by_class.iter_mut() {
        list.shuffle(rng);
    }
    let mut cursors = vec![0usize; num_classes];
    let mut interleaved = Vec::with_capacity(n);
    while interleaved.len() < n {
        let mut advanced = false;
        for c in 0..num_classes {
            if cursors[c] < by_class[c].len() {
                interleaved.push(by_class[c][cursors[c]]);
                cursors[c] += 1;
                advanced = true;
            }
        }
        if !advanced {
            break;
        }
    }
    let mut shards = Vec::with_capacity(quotas.len());
    let mut start = 0;
    for &q in quotas {
        shards.push(interleaved[start..start + q].to_vec());
        start += q;
    }
    Ok(shards)
}

/// Split every non-target domain of one group into per-client datasets.
/// Client ids are assigned sequentially from `first_client_id` in (domain,
/// shard) order. Deterministic per seed.
pub fn partition<T: Scalar>(
    domains: &[DomainDataset<T>],
    target_domain: &str,
    mode: &PartitionMode,
    seed: u64,
    first_client_id: u32,
) -> Result<(PartitionPlan, Vec<DomainDataset<T>>)> {
    if !domains.iter().any(|d| d.domain == target_domain) {
        return Err(CoreError::InvalidConfig(format!(
            "target domain {target_domain:?} not found"
        )));
    }
    if let PartitionMode::UnbalancedOne { domain, .. } = mode {
        if !domains.iter().any(|d| d.domain == *domain && d.domain != target_domain) {
            return Err(CoreError::InvalidConfig(format!(
                "designated unbalanced domain {domain:?} is not a training domain"
            )));
        }
    }
    let group = domains
        .first()
        .map(|d| d.group.clone())
        .ok_or_else(|| CoreError::Empty("domain list".into()))?;

    let mut assignments = Vec::new();
    let mut shards = Vec::new();
    let mut next_id = first_client_id;
    for (domain_idx, domain) in domains.iter().enumerate() {
        if domain.domain == target_domain {
            continue;
        }
        let quotas = match mode {
            PartitionMode::Balanced => near_equal(domain.len(), CLIENTS_PER_DOMAIN),
            PartitionMode::UnbalancedAll { weights } => weighted_quotas(domain.len(), weights)?,
            PartitionMode::UnbalancedOne {
                domain: skewed,
                weights,
            } => {
                if domain.domain == *skewed {
                    weighted_quotas(domain.len(), weights)?
                } else {
                    near_equal(domain.len(), CLIENTS_PER_DOMAIN)
                }
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "partition", &[domain_idx as u64]));
        let idx_shards =
            stratified_split(&domain.data.labels, domain.data.num_classes, &quotas, &mut rng)?;
        for idx in idx_shards {
            let shard = domain.shard(&idx);
            assignments.push(ClientAssignment {
                client_id: next_id,
                domain: domain.domain.clone(),
                sample_count: shard.len(),
            });
            shards.push(shard);
            next_id += 1;
        }
    }
    let plan = PartitionPlan {
        group: group.to_string(),
        target_domain: target_domain.to_string(),
        mode: if mode.is_unbalanced() {
            "unbalanced".into()
        } else {
            "balanced".into()
        },
        stratified: true,
        assignments,
    };
    Ok((plan, shards))
}

/// Disjoint near-equal (train, validation) index folds over `n` samples.
pub fn kfold_splits(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k == 0 {
        return Err(CoreError::InvalidConfig("k must be >= 1".into()));
    }
    if n < k {
        return Err(CoreError::InvalidConfig(format!(
            "cannot split {n} samples into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "kfold", &[]));
    order.shuffle(&mut rng);
    let sizes = near_equal(n, k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for &s in &sizes {
        let val: Vec<usize> = {
            let mut v = order[start..start + s].to_vec();
            v.sort_unstable();
            v
        };
        let train: Vec<usize> = {
            let mut t: Vec<usize> = order[..start]
                .iter()
                .chain(order[start + s..].iter())
                .copied()
                .collect();
            t.sort_unstable();
            t
        };
        out.push((train, val));
        start += s;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, ShiftSpec};
    use std::collections::BTreeSet;

    fn group_m_small() -> Vec<DomainDataset<f64>> {
        let spec = ShiftSpec {
            feature_dim: 20,
            subspace_dim: 4,
            nuisance_dim: 4,
            ..ShiftSpec::new("M", 4, 1, 2)
        };
        generate_synthetic(
            &spec,
            &[
                ("AC".to_string(), 200),
                ("CC".to_string(), 200),
                ("CA".to_string(), 200),
                ("AA".to_string(), 200),
            ],
        )
        .unwrap()
    }

    fn group_s_small() -> Vec<DomainDataset<f64>> {
        let spec = ShiftSpec {
            feature_dim: 20,
            subspace_dim: 4,
            nuisance_dim: 4,
            ..ShiftSpec::new("S", 3, 1, 3)
        };
        generate_synthetic(
            &spec,
            &[
                ("Clean".to_string(), 90),
                ("Polished".to_string(), 90),
                ("Contam".to_string(), 90),
            ],
        )
        .unwrap()
    }

    #[test]
    fn balanced_group_m_shard_sizes() {
        let (plan, shards) =
            partition(&group_m_small(), "AA", &PartitionMode::Balanced, 7, 0).unwrap();
        assert_eq!(shards.len(), 9);
        for domain in ["AC", "CC", "CA"] {
            let mut sizes: Vec<usize> = plan
                .assignments
                .iter()
                .filter(|a| a.domain == domain)
                .map(|a| a.sample_count)
                .collect();
            sizes.sort_unstable();
            assert_eq!(sizes, vec![66, 67, 67]);
        }
    }

    #[test]
    fn balanced_group_s_shard_sizes() {
        let (plan, shards) =
            partition(&group_s_small(), "Clean", &PartitionMode::Balanced, 7, 100).unwrap();
        assert_eq!(shards.len(), 6);
        assert!(plan.assignments.iter().all(|a| a.sample_count == 30));
        assert_eq!(plan.assignments[0].client_id, 100);
        assert_eq!(plan.assignments[5].client_id, 105);
    }

    #[test]
    fn unbalanced_group_m_shard_sizes() {
        let mode = PartitionMode::UnbalancedAll {
            weights: UNBALANCED_WEIGHTS_LARGE.to_vec(),
        };
        let (plan, _) = partition(&group_m_small(), "AA", &mode, 7, 0).unwrap();
        for domain in ["AC", "CC", "CA"] {
            let sizes: Vec<usize> = plan
                .assignments
                .iter()
                .filter(|a| a.domain == domain)
                .map(|a| a.sample_count)
                .collect();
            assert_eq!(sizes, vec![30, 60, 110]);
        }
    }

    #[test]
    fn unbalanced_group_s_designated_domain() {
        let mode = PartitionMode::UnbalancedOne {
            domain: "Polished".into(),
            weights: UNBALANCED_WEIGHTS_SMALL.to_vec(),
        };
        let (plan, _) = partition(&group_s_small(), "Clean", &mode, 7, 0).unwrap();
        let polished: Vec<usize> = plan
            .assignments
            .iter()
            .filter(|a| a.domain == "Polished")
            .map(|a| a.sample_count)
            .collect();
        assert_eq!(polished, vec![15, 25, 50]);
        let contam: Vec<usize> = plan
            .assignments
            .iter()
            .filter(|a| a.domain == "Contam")
            .map(|a| a.sample_count)
            .collect();
        assert_eq!(contam, vec![30, 30, 30]);
    }

    #[test]
    fn shards_are_disjoint_and_conserve_samples() {
        let domains = group_m_small();
        let (_, shards) = partition(&domains, "AA", &PartitionMode::Balanced, 11, 0).unwrap();
        for domain in ["AC", "CC", "CA"] {
            let parent = domains.iter().find(|d| d.domain == domain).unwrap();
            let mut seen = BTreeSet::new();
            let mut total = 0;
            for s in shards.iter().filter(|s| s.domain == domain) {
                total += s.len();
                for &o in &s.origin {
                    assert!(seen.insert(o), "row {o} of {domain} appears twice");
                }
            }
            assert_eq!(total, parent.len());
        }
    }

    #[test]
    fn target_domain_is_isolated() {
        let (_, shards) = partition(&group_m_small(), "AA", &PartitionMode::Balanced, 3, 0).unwrap();
        assert!(shards.iter().all(|s| s.domain != "AA"));
    }

    #[test]
    fn class_balance_within_one_sample() {
        let domains = group_m_small();
        let (_, shards) = partition(&domains, "AA", &PartitionMode::Balanced, 5, 0).unwrap();
        for shard in &shards {
            let counts = shard.data.class_counts();
            let per_class_ideal = shard.len() as f64 / shard.data.num_classes as f64;
            for &c in &counts {
                assert!(
                    (c as f64 - per_class_ideal).abs() <= 1.0,
                    "class count {c} too far from {per_class_ideal} in a shard of {}",
                    shard.len()
                );
            }
        }
    }

    #[test]
    fn partition_is_deterministic() {
        let domains = group_s_small();
        let (_, a) = partition(&domains, "Clean", &PartitionMode::Balanced, 9, 0).unwrap();
        let (_, b) = partition(&domains, "Clean", &PartitionMode::Balanced, 9, 0).unwrap();
        assert_eq!(a.iter().map(|s| &s.origin).collect::<Vec<_>>(),
                   b.iter().map(|s| &s.origin).collect::<Vec<_>>());
        let (_, c) = partition(&domains, "Clean", &PartitionMode::Balanced, 10, 0).unwrap();
        assert_ne!(a.iter().map(|s| &s.origin).collect::<Vec<_>>(),
                   c.iter().map(|s| &s.origin).collect::<Vec<_>>());
    }

    #[test]
    fn missing_target_rejected() {
        let domains = group_s_small();
        assert!(partition(&domains, "Nope", &PartitionMode::Balanced, 0, 0).is_err());
    }

    #[test]
    fn kfold_shapes_and_disjointness() {
        let folds = kfold_splits(10, 5, 1).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all_val = BTreeSet::new();
        for (train, val) in &folds {
            assert_eq!(val.len(), 2);
            assert_eq!(train.len(), 8);
            for v in val {
                assert!(all_val.insert(*v));
                assert!(!train.contains(v));
            }
        }
        assert_eq!(all_val.len(), 10);

        let folds90 = kfold_splits(90, 5, 2).unwrap();
        assert!(folds90.iter().all(|(_, v)| v.len() == 18));

        assert!(kfold_splits(3, 5, 0).is_err());
    }
}
