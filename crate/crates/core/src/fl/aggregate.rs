//! Server-side aggregation.
//!
//! Summation order is fixed by ascending client id, so aggregation is
//! deterministic regardless of the order updates arrive in — shuffling the
//! input list leaves the output bit-identical, which is also what keeps a
//! networked run equal to the simulator.
//!
//! The accumulated weighted mean is clamped elementwise to the range the
//! clients span: floating-point rounding can otherwise push a coordinate an
//! ulp past the extremes, and clamping also makes aggregation of identical
//! models an exact fixed point.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{CoreError, Result};
use crate::nn::ModelParams;
use crate::scalar::Scalar;

use super::{ClientUpdate, GroupId};

fn sorted_refs<T: Scalar>(updates: &[ClientUpdate<T>]) -> Result<Vec<&ClientUpdate<T>>> {
    if updates.is_empty() {
        return Err(CoreError::Empty("update list".into()));
    }
    let mut refs: Vec<&ClientUpdate<T>> = updates.iter().collect();
    refs.sort_by_key(|u| u.client_id);
    for w in refs.windows(2) {
        if w[0].client_id == w[1].client_id {
            return Err(CoreError::InvalidConfig(format!(
                "duplicate update from client {}",
                w[0].client_id
            )));
        }
    }
    for u in &refs {
        u.validate()?;
    }
    Ok(refs)
}

fn iter_segment<T: Scalar>(
    params: &ModelParams<T>,
    range: Range<usize>,
) -> impl Iterator<Item = T> + '_ {
    params.layers[range]
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
}

fn segment_len<T: Scalar>(params: &ModelParams<T>, range: Range<usize>) -> usize {
    params.layers[range]
        .iter()
        .map(|l| l.weights.len() + l.bias.len())
        .sum()
}

/// Weighted mean over aligned flat parameter streams, clamped to the
/// elementwise client range.
struct RunningMean<T> {
    acc: Vec<T>,
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Scalar> RunningMean<T> {
    fn new(len: usize) -> Self {
        Self {
            acc: vec![T::zero(); len],
            lo: vec![T::infinity(); len],
            hi: vec![T::neg_infinity(); len],
        }
    }

    fn add(&mut self, w: T, src: impl Iterator<Item = T>) {
        for (i, s) in src.enumerate() {
            self.acc[i] = self.acc[i] + w * s;
            if s < self.lo[i] {
                self.lo[i] = s;
            }
            if s > self.hi[i] {
                self.hi[i] = s;
            }
        }
    }

    fn finish(mut self) -> Vec<T> {
        for ((a, &lo), &hi) in self.acc.iter_mut().zip(&self.lo).zip(&self.hi) {
            if *a < lo {
                *a = lo;
            } else if *a > hi {
                *a = hi;
            }
        }
        self.acc
    }
}

fn write_segment<T: Scalar>(params: &mut ModelParams<T>, range: Range<usize>, flat: &[T]) {
    let mut it = flat.iter();
    for layer in params.layers[range].iter_mut() {
        for dst in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *dst = *it.next().expect("flat segment length");
        }
    }
    debug_assert!(it.next().is_none());
}

/// Parameter-wise weighted mean with weights `n_k / N`.
pub fn aggregate_fedavg<T: Scalar>(updates: &[ClientUpdate<T>]) -> Result<ModelParams<T>> {
    let refs = sorted_refs(updates)?;
    let first = &refs[0].params;
    for u in &refs[1..] {
        if !u.params.same_shape(first) {
            return Err(CoreError::DimMismatch(format!(
                "update from client {} has a different shape",
                u.client_id
            )));
        }
    }
    let layer_count = first.layers.len();
    let total: u64 = refs.iter().map(|u| u.n_k).sum();
    let total_t = T::from_f64(total as f64);
    let mut mean = RunningMean::new(segment_len(first, 0..layer_count));
    for u in &refs {
        let w = T::from_f64(u.n_k as f64) / total_t;
        mean.add(w, iter_segment(&u.params, 0..layer_count));
    }
    let mut out = first.zeros_like();
    write_segment(&mut out, 0..layer_count, &mean.finish());
    Ok(out)
}

/// Shared-base / per-group-head aggregation.
///
/// The base segment (layers below `base_cut`) is the `n_k / N` weighted mean
/// over updates of *all* groups; each group's head is the `n_k / N_g`
/// weighted mean over that group's updates alone. All returned models carry
/// a bit-identical base. A group of `prev` with no updates this round keeps
/// its head unchanged (under the new base) and is reported in the skipped
/// list.
pub fn aggregate_ftl_tp<T: Scalar>(
    updates: &[ClientUpdate<T>],
    prev: &BTreeMap<GroupId, ModelParams<T>>,
    base_cut: usize,
) -> Result<(BTreeMap<GroupId, ModelParams<T>>, Vec<GroupId>)> {
    if prev.is_empty() {
        return Err(CoreError::Empty("previous global state".into()));
    }
    let refs = sorted_refs(updates)?;
    for u in &refs {
        let model = prev.get(&u.group).ok_or_else(|| {
            CoreError::InvalidConfig(format!(
                "update from client {} names unknown group {}",
                u.client_id, u.group
            ))
        })?;
        if base_cut >= u.params.layers.len() || !u.params.same_base_shape(model, base_cut) {
            return Err(CoreError::DimMismatch(format!(
                "update from client {} has an incompatible base segment",
                u.client_id
            )));
        }
        if !u.params.same_shape(model) {
            return Err(CoreError::DimMismatch(format!(
                "update from client {} does not match its group model",
                u.client_id
            )));
        }
    }

    // Shared base over all updates.
    let total: u64 = refs.iter().map(|u| u.n_k).sum();
    let total_t = T::from_f64(total as f64);
    let mut base_mean = RunningMean::new(segment_len(&refs[0].params, 0..base_cut));
    for u in &refs {
        let w = T::from_f64(u.n_k as f64) / total_t;
        base_mean.add(w, iter_segment(&u.params, 0..base_cut));
    }
    let base_flat = base_mean.finish();

    let mut out = BTreeMap::new();
    let mut skipped = Vec::new();
    for (group, prev_model) in prev {
        let group_refs: Vec<&&ClientUpdate<T>> =
            refs.iter().filter(|u| &u.group == group).collect();
        let mut model = prev_model.clone();
        let head_range = base_cut..model.layers.len();
        if group_refs.is_empty() {
            skipped.push(group.clone());
        } else {
            let group_total: u64 = group_refs.iter().map(|u| u.n_k).sum();
            let group_total_t = T::from_f64(group_total as f64);
            let mut head_mean = RunningMean::new(segment_len(&model, head_range.clone()));
            for u in &group_refs {
                let w = T::from_f64(u.n_k as f64) / group_total_t;
                head_mean.add(w, iter_segment(&u.params, head_range.clone()));
            }
            let head_flat = head_mean.finish();
            write_segment(&mut model, head_range, &head_flat);
        }
        // Install the shared base verbatim so every group's copy is
        // bit-identical.
        write_segment(&mut model, 0..base_cut, &base_flat);
        out.insert(group.clone(), model);
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_kaiming, mlp_spec, DenseLayer};

    fn scalar_update(
        client_id: u32,
        group: &str,
        n_k: u64,
        theta_b: f64,
        theta_p: f64,
    ) -> ClientUpdate<f64> {
        let mut params = ModelParams {
            layers: vec![DenseLayer::zeros(1, 1), DenseLayer::zeros(1, 1)],
            base_cut: 1,
        };
        params.layers[0].weights[0] = theta_b;
        params.layers[1].weights[0] = theta_p;
        ClientUpdate {
            client_id,
            group: GroupId::new(group),
            params,
            n_k,
            round: 1,
        }
    }

    #[test]
    fn single_update_passes_through() {
        let u = scalar_update(0, "g", 5, 1.5, -2.5);
        let agg = aggregate_fedavg(&[u.clone()]).unwrap();
        assert!(agg.bits_eq(&u.params));
    }

    #[test]
    fn identical_params_are_an_exact_fixed_point() {
        let updates: Vec<ClientUpdate<f64>> = (0..4)
            .map(|i| {
                let mut u = scalar_update(i, "g", (i + 1) as u64, 0.3, 0.7);
                u.params.layers[0].bias[0] = -1.0;
                u
            })
            .collect();
        let agg = aggregate_fedavg(&updates).unwrap();
        assert!(agg.bits_eq(&updates[0].params));
    }

    #[test]
    fn hand_computed_weighted_mean() {
        let updates = vec![
            scalar_update(0, "g", 1, 0.0, 0.0),
            scalar_update(1, "g", 3, 4.0, 4.0),
        ];
        let agg = aggregate_fedavg(&updates).unwrap();
        assert_eq!(agg.layers[0].weights[0], 3.0);
    }

    #[test]
    fn ftl_tp_worked_example() {
        // group1: two clients n=1 with theta_B=[1],[3], heads [2],[4];
        // group2: one client n=2 with theta_B=[5], head [7].
        let updates = vec![
            scalar_update(0, "g1", 1, 1.0, 2.0),
            scalar_update(1, "g1", 1, 3.0, 4.0),
            scalar_update(2, "g2", 2, 5.0, 7.0),
        ];
        let mut prev = BTreeMap::new();
        prev.insert(GroupId::new("g1"), updates[0].params.zeros_like());
        prev.insert(GroupId::new("g2"), updates[2].params.zeros_like());
        let (models, skipped) = aggregate_ftl_tp(&updates, &prev, 1).unwrap();
        assert!(skipped.is_empty());
        let g1 = &models[&GroupId::new("g1")];
        let g2 = &models[&GroupId::new("g2")];
        assert_eq!(g1.layers[0].weights[0], 3.5);
        assert_eq!(g2.layers[0].weights[0], 3.5);
        assert_eq!(g1.layers[1].weights[0], 3.0);
        assert_eq!(g2.layers[1].weights[0], 7.0);
        assert!(g1.base_bits_eq(g2, 1));
    }

    #[test]
    fn ftl_tp_identical_params_fixed_point() {
        let updates = vec![
            scalar_update(0, "g1", 2, 0.5, 1.5),
            scalar_update(1, "g2", 3, 0.5, 1.5),
        ];
        let mut prev = BTreeMap::new();
        prev.insert(GroupId::new("g1"), updates[0].params.zeros_like());
        prev.insert(GroupId::new("g2"), updates[1].params.zeros_like());
        let (models, _) = aggregate_ftl_tp(&updates, &prev, 1).unwrap();
        assert!(models[&GroupId::new("g1")].bits_eq(&updates[0].params));
        assert!(models[&GroupId::new("g2")].bits_eq(&updates[1].params));
    }

    #[test]
    fn single_group_reduces_to_fedavg() {
        let updates = vec![
            scalar_update(0, "g", 2, 1.0, -1.0),
            scalar_update(1, "g", 6, 3.0, 5.0),
        ];
        let mut prev = BTreeMap::new();
        prev.insert(GroupId::new("g"), updates[0].params.zeros_like());
        let (models, _) = aggregate_ftl_tp(&updates, &prev, 1).unwrap();
        let fedavg = aggregate_fedavg(&updates).unwrap();
        assert!(models[&GroupId::new("g")].bits_eq(&fedavg));
    }

    #[test]
    fn skipped_group_carries_head_forward() {
        let updates = vec![scalar_update(0, "g1", 1, 2.0, 9.0)];
        let mut prev_g2 = updates[0].params.zeros_like();
        prev_g2.layers[1].weights[0] = -4.0;
        let mut prev = BTreeMap::new();
        prev.insert(GroupId::new("g1"), updates[0].params.zeros_like());
        prev.insert(GroupId::new("g2"), prev_g2);
        let (models, skipped) = aggregate_ftl_tp(&updates, &prev, 1).unwrap();
        assert_eq!(skipped, vec![GroupId::new("g2")]);
        let g2 = &models[&GroupId::new("g2")];
        assert_eq!(g2.layers[1].weights[0], -4.0);
        assert_eq!(g2.layers[0].weights[0], 2.0);
    }

    #[test]
    fn shuffled_input_gives_bit_identical_output() {
        let spec = mlp_spec(4, &[3], 2);
        let updates: Vec<ClientUpdate<f64>> = (0..5u32)
            .map(|i| ClientUpdate {
                client_id: i,
                group: GroupId::new("g"),
                params: init_kaiming(&spec, 1, 100 + i as u64).unwrap(),
                n_k: (i as u64 % 3) + 1,
                round: 1,
            })
            .collect();
        let a = aggregate_fedavg(&updates).unwrap();
        let mut shuffled = updates.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        let b = aggregate_fedavg(&shuffled).unwrap();
        assert!(a.bits_eq(&b));
    }

    #[test]
    fn scaling_all_counts_is_invariant() {
        let updates = vec![
            scalar_update(0, "g", 1, 0.3, 0.9),
            scalar_update(1, "g", 3, -0.7, 0.1),
            scalar_update(2, "g", 5, 2.2, -1.1),
        ];
        let a = aggregate_fedavg(&updates).unwrap();
        let scaled: Vec<ClientUpdate<f64>> = updates
            .iter()
            .map(|u| {
                let mut v = u.clone();
                v.n_k *= 7;
                v
            })
            .collect();
        let b = aggregate_fedavg(&scaled).unwrap();
        assert!(a.bits_eq(&b));
    }

    #[test]
    fn aggregated_values_stay_within_client_range() {
        let updates = vec![
            scalar_update(0, "g", 2, -1.0, 4.0),
            scalar_update(1, "g", 5, 3.0, -2.0),
        ];
        let agg = aggregate_fedavg(&updates).unwrap();
        let v = agg.layers[0].weights[0];
        assert!((-1.0..=3.0).contains(&v));
        let p = agg.layers[1].weights[0];
        assert!((-2.0..=4.0).contains(&p));
    }

    #[test]
    fn duplicate_client_rejected() {
        let updates = vec![
            scalar_update(3, "g", 1, 0.0, 0.0),
            scalar_update(3, "g", 1, 1.0, 1.0),
        ];
        assert!(aggregate_fedavg(&updates).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = scalar_update(0, "g", 1, 0.0, 0.0);
        let spec = mlp_spec(2, &[2], 2);
        let b = ClientUpdate {
            client_id: 1,
            group: GroupId::new("g"),
            params: init_kaiming(&spec, 1, 0).unwrap(),
            n_k: 1,
            round: 1,
        };
        assert!(aggregate_fedavg(&[a, b]).is_err());
    }
}
