//! Per-round client sampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::seed::derive_str;

use super::GroupId;

/// Sample `max(round(C_g * M_g), 1)` distinct clients per group, uniformly
/// without replacement, deterministically per seed. Returned ids are sorted
/// ascending.
pub fn sample_clients(
    rosters: &BTreeMap<GroupId, Vec<u32>>,
    fractions: &BTreeMap<GroupId, f64>,
    seed: u64,
) -> Result<BTreeMap<GroupId, Vec<u32>>> {
    let mut out = BTreeMap::new();
    for (group, ids) in rosters {
        if ids.is_empty() {
            return Err(CoreError::Empty(format!("group {group} has no clients")));
        }
        let c = fractions.get(group).copied().unwrap_or(1.0);
        if !(c > 0.0 && c <= 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "client fraction {c} for group {group} outside (0, 1]"
            )));
        }
        let m = ((c * ids.len() as f64).round() as usize).max(1).min(ids.len());
        let mut pool = ids.clone();
        pool.sort_unstable();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_str(seed, "sample-group", &[group.as_str()], &[]));
        pool.shuffle(&mut rng);
        let mut chosen: Vec<u32> = pool[..m].to_vec();
        chosen.sort_unstable();
        out.insert(group.clone(), chosen);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roster(group: &str, n: u32) -> BTreeMap<GroupId, Vec<u32>> {
        let mut m = BTreeMap::new();
        m.insert(GroupId::new(group), (0..n).collect());
        m
    }

    fn fractions(group: &str, c: f64) -> BTreeMap<GroupId, f64> {
        let mut m = BTreeMap::new();
        m.insert(GroupId::new(group), c);
        m
    }

    #[test]
    fn full_fraction_selects_everyone() {
        let sampled = sample_clients(&roster("M", 9), &fractions("M", 1.0), 0).unwrap();
        assert_eq!(sampled[&GroupId::new("M")], (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn third_of_nine_selects_three() {
        let sampled = sample_clients(&roster("M", 9), &fractions("M", 1.0 / 3.0), 0).unwrap();
        let ids = &sampled[&GroupId::new("M")];
        assert_eq!(ids.len(), 3);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tiny_fraction_is_floored_to_one() {
        let sampled = sample_clients(&roster("S", 6), &fractions("S", 0.01), 0).unwrap();
        assert_eq!(sampled[&GroupId::new("S")].len(), 1);
    }

    #[test]
    fn deterministic_per_seed_and_varies_across_rounds() {
        let r = roster("M", 9);
        let f = fractions("M", 2.0 / 3.0);
        let a = sample_clients(&r, &f, 42).unwrap();
        let b = sample_clients(&r, &f, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_clients(&r, &f, 43).unwrap();
        // 6 of 9: different seeds almost surely differ.
        assert!(a != c || a[&GroupId::new("M")].len() == 9);
    }

    #[test]
    fn empty_group_is_an_error() {
        let mut r = BTreeMap::new();
        r.insert(GroupId::new("M"), Vec::<u32>::new());
        assert!(sample_clients(&r, &BTreeMap::new(), 0).is_err());
    }
}
