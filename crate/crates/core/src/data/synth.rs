//! Synthetic multi-domain generator with controllable domain shift.
//!
//! Labels are decided by class prototypes living in a low-dimensional
//! subspace that is shared across domains (and, via `subspace_seed`, across
//! domain groups). All domain-specific structure — mean offsets and
//! per-domain covariance directions — is applied in the orthogonal
//! complement of that subspace, so a model generalizes to a held-out domain
//! exactly to the extent that it learns the shared subspace rather than
//! domain nuisance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fl::GroupId;
use crate::scalar::Scalar;
use crate::seed::derive;

use super::{DomainDataset, Samples};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ShiftSpec {
    pub group: String,
    pub num_classes: usize,
    /// Feature dimensionality of every sample.
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Dimension of the shared discriminative subspace.
    #[serde(default = "default_subspace_dim")]
    pub subspace_dim: usize,
    /// Seed of the shared subspace basis; groups meant to share a feature
    /// space must use the same value.
    pub subspace_seed: u64,
    /// Group-specific stream for prototypes, offsets and sample noise.
    pub seed: u64,
    /// Distance of class prototypes from the origin (in subspace coords).
    #[serde(default = "default_class_sep")]
    pub class_sep: f64,
    /// Within-class spread inside the subspace.
    #[serde(default = "default_within_scale")]
    pub within_scale: f64,
    /// Norm of the per-domain mean offset (orthogonal to the subspace).
    #[serde(default = "default_offset_scale")]
    pub offset_scale: f64,
    /// Number of per-domain covariance directions in the complement.
    #[serde(default = "default_nuisance_dim")]
    pub nuisance_dim: usize,
    /// Scale of the per-domain covariance component.
    #[serde(default = "default_nuisance_scale")]
    pub nuisance_scale: f64,
    /// Isotropic noise scale; must be > 0.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    /// Explicit per-domain mean offsets (full feature-space vectors). When
    /// absent, offsets are drawn in the complement of the subspace.
    #[serde(default)]
    pub domain_offsets: Option<Vec<Vec<f64>>>,
}

fn default_feature_dim() -> usize {
    624
}
fn default_subspace_dim() -> usize {
    16
}
fn default_class_sep() -> f64 {
    3.0
}
fn default_within_scale() -> f64 {
    1.0
}
fn default_offset_scale() -> f64 {
    2.5
}
fn default_nuisance_dim() -> usize {
    24
}
fn default_nuisance_scale() -> f64 {
    1.5
}
fn default_noise_scale() -> f64 {
    0.5
}

impl ShiftSpec {
    pub fn new(group: &str, num_classes: usize, subspace_seed: u64, seed: u64) -> Self {
        Self {
            group: group.to_string(),
            num_classes,
            feature_dim: default_feature_dim(),
            subspace_dim: default_subspace_dim(),
            subspace_seed,
            seed,
            class_sep: default_class_sep(),
            within_scale: default_within_scale(),
            offset_scale: default_offset_scale(),
            nuisance_dim: default_nuisance_dim(),
            nuisance_scale: default_nuisance_scale(),
            noise_scale: default_noise_scale(),
            domain_offsets: None,
        }
    }

    fn validate(&self, num_domains: usize) -> Result<()> {
        if self.num_classes < 2 {
            return Err(CoreError::InvalidConfig("need at least 2 classes".into()));
        }
        if self.subspace_dim >= self.feature_dim {
            return Err(CoreError::InvalidConfig(format!(
                "subspace dim {} must be < feature dim {}",
                self.subspace_dim, self.feature_dim
            )));
        }
        if self.subspace_dim == 0 {
            return Err(CoreError::InvalidConfig("subspace dim must be >= 1".into()));
        }
        if self.noise_scale <= 0.0 {
            return Err(CoreError::InvalidConfig("noise scale must be > 0".into()));
        }
        if let Some(offsets) = &self.domain_offsets {
            if offsets.len() != num_domains {
                return Err(CoreError::InvalidConfig(format!(
                    "{} explicit offsets for {} domains",
                    offsets.len(),
                    num_domains
                )));
            }
            if offsets.iter().any(|o| o.len() != self.feature_dim) {
                return Err(CoreError::DimMismatch(
                    "offset vector length != feature dim".into(),
                ));
            }
        }
        Ok(())
    }
}

struct Normals {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Normals {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    fn vector(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.next()).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Remove the projections of `v` onto each (unit-norm) row of `basis`.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for u in basis {
        let p = dot(v, u);
        for (x, y) in v.iter_mut().zip(u) {
            *x -= p * y;
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Orthonormal rows spanning a random `count`-dimensional subspace,
/// optionally orthogonal to `against`.
fn random_basis(normals: &mut Normals, dim: usize, count: usize, against: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = normals.vector(dim);
        orthogonalize(&mut v, against);
        orthogonalize(&mut v, &basis);
        // A degenerate draw (norm ~ 0) is vanishingly unlikely; redraw.
        if normalize(&mut v) > 1e-8 {
            basis.push(v);
        }
    }
    basis
}

/// Generate one domain group's datasets. Deterministic per spec; the label
/// rule (nearest class prototype in the shared subspace) is identical across
/// domains.
pub fn generate_synthetic<T: Scalar>(
    spec: &ShiftSpec,
    sizes: &[(String, usize)],
) -> Result<Vec<DomainDataset<T>>> {
    spec.validate(sizes.len())?;
    if sizes.is_empty() {
        return Err(CoreError::Empty("domain size list".into()));
    }
    if let Some((name, _)) = sizes.iter().find(|(_, n)| *n == 0) {
        return Err(CoreError::InvalidConfig(format!("domain {name} has size 0")));
    }

    let dim = spec.feature_dim;
    let sub = spec.subspace_dim;

    // Shared subspace basis: identical for every group built with the same
    // subspace seed.
    let mut basis_rng = Normals::new(derive(spec.subspace_seed, "subspace-basis", &[]));
    let subspace = random_basis(&mut basis_rng, dim, sub, &[]);

    // Class prototypes in subspace coordinates.
    let mut proto_rng = Normals::new(derive(spec.seed, "class-prototypes", &[]));
    let prototypes: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let mut p = proto_rng.vector(sub);
            normalize(&mut p);
            p.iter_mut().for_each(|x| *x *= spec.class_sep);
            p
        })
        .collect();

    let group = GroupId::new(&spec.group);
    let mut out = Vec::with_capacity(sizes.len());
    for (domain_idx, (domain_name, n)) in sizes.iter().enumerate() {
        let n = *n;
        let mut rng = Normals::new(derive(spec.seed, "domain", &[domain_idx as u64]));

        let offset: Vec<f64> = match &spec.domain_offsets {
            Some(offsets) => offsets[domain_idx].clone(),
            None => {
                let mut v = rng.vector(dim);
                orthogonalize(&mut v, &subspace);
                normalize(&mut v);
                v.iter_mut().for_each(|x| *x *= spec.offset_scale);
                v
            }
        };
        let nuisance = if spec.nuisance_dim > 0 && spec.nuisance_scale > 0.0 {
            random_basis(&mut rng, dim, spec.nuisance_dim, &subspace)
        } else {
            Vec::new()
        };

        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % spec.num_classes;
            let mut x = vec![0.0f64; dim];
            // Subspace coordinates: prototype + within-class spread.
            for (j, u) in subspace.iter().enumerate() {
                let coord = prototypes[class][j] + spec.within_scale * rng.next();
                for (xi, ui) in x.iter_mut().zip(u) {
                    *xi += coord * ui;
                }
            }
            for (xi, oi) in x.iter_mut().zip(&offset) {
                *xi += oi;
            }
            for dir in &nuisance {
                let coord = spec.nuisance_scale * rng.next();
                for (xi, di) in x.iter_mut().zip(dir) {
                    *xi += coord * di;
                }
            }
            for xi in x.iter_mut() {
                *xi += spec.noise_scale * rng.next();
            }
            features.extend(x.into_iter().map(T::from_f64));
            labels.push(class);
        }
        let data = Samples::new(features, labels, dim, spec.num_classes)?;
        out.push(DomainDataset::new(group.clone(), domain_name.clone(), data));
    }

    // Generated offsets are distinct with probability one; explicit ones are
    // the caller's business (the no-shift limit deliberately repeats zeros).
    if spec.domain_offsets.is_none() && out.len() > 1 {
        debug_assert!({
            let mut ok = true;
            'outer: for i in 0..out.len() {
                for j in i + 1..out.len() {
                    let a = out[i].data.row(0);
                    let b = out[j].data.row(0);
                    if a == b {
                        ok = false;
                        break 'outer;
                    }
                }
            }
            ok
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(v: &[(&str, usize)]) -> Vec<(String, usize)> {
        v.iter().map(|(d, n)| (d.to_string(), *n)).collect()
    }

    #[test]
    fn shapes_mirror_group_m() {
        let spec = ShiftSpec::new("M", 4, 11, 22);
        let ds: Vec<DomainDataset<f64>> = generate_synthetic(
            &spec,
            &sizes(&[("AC", 200), ("CC", 200), ("CA", 200), ("AA", 200)]),
        )
        .unwrap();
        assert_eq!(ds.len(), 4);
        for d in &ds {
            assert_eq!(d.len(), 200);
            assert_eq!(d.data.dim, 624);
            assert_eq!(d.data.num_classes, 4);
            assert_eq!(d.data.class_counts(), vec![50, 50, 50, 50]);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = ShiftSpec {
            feature_dim: 40,
            subspace_dim: 4,
            nuisance_dim: 4,
            ..ShiftSpec::new("S", 3, 5, 6)
        };
        let a: Vec<DomainDataset<f64>> = generate_synthetic(&spec, &sizes(&[("d0", 30)])).unwrap();
        let b: Vec<DomainDataset<f64>> = generate_synthetic(&spec, &sizes(&[("d0", 30)])).unwrap();
        assert_eq!(a[0].data.features, b[0].data.features);
        let mut spec2 = spec.clone();
        spec2.seed = 7;
        let c: Vec<DomainDataset<f64>> = generate_synthetic(&spec2, &sizes(&[("d0", 30)])).unwrap();
        assert_ne!(a[0].data.features, c[0].data.features);
    }

    #[test]
    fn shared_subspace_is_shared_across_groups() {
        // Same subspace seed, different group seeds: the discriminative
        // directions coincide even though samples differ.
        let m = ShiftSpec {
            feature_dim: 30,
            subspace_dim: 3,
            ..ShiftSpec::new("M", 4, 99, 1)
        };
        let s = ShiftSpec {
            feature_dim: 30,
            subspace_dim: 3,
            ..ShiftSpec::new("S", 3, 99, 2)
        };
        let mut rng_a = Normals::new(derive(m.subspace_seed, "subspace-basis", &[]));
        let basis_a = random_basis(&mut rng_a, 30, 3, &[]);
        let mut rng_b = Normals::new(derive(s.subspace_seed, "subspace-basis", &[]));
        let basis_b = random_basis(&mut rng_b, 30, 3, &[]);
        assert_eq!(basis_a, basis_b);
    }

    #[test]
    fn no_shift_limit_keeps_domains_identically_distributed() {
        let dim = 30;
        let spec = ShiftSpec {
            feature_dim: dim,
            subspace_dim: 3,
            nuisance_dim: 0,
            nuisance_scale: 0.0,
            noise_scale: 1e-9,
            within_scale: 0.2,
            domain_offsets: Some(vec![vec![0.0; dim]; 2]),
            ..ShiftSpec::new("S", 3, 1, 2)
        };
        let ds: Vec<DomainDataset<f64>> =
            generate_synthetic(&spec, &sizes(&[("a", 300), ("b", 300)])).unwrap();
        // Per-class means agree across domains up to sampling error.
        for class in 0..3 {
            for (da, db) in [(0usize, 1usize)] {
                let mean = |d: &DomainDataset<f64>| -> Vec<f64> {
                    let idx: Vec<usize> = (0..d.len()).filter(|&i| d.data.labels[i] == class).collect();
                    let mut m = vec![0.0; dim];
                    for &i in &idx {
                        for (mj, xj) in m.iter_mut().zip(d.data.row(i)) {
                            *mj += xj;
                        }
                    }
                    m.iter_mut().for_each(|x| *x /= idx.len() as f64);
                    m
                };
                let ma = mean(&ds[da]);
                let mb = mean(&ds[db]);
                let diff: f64 = ma
                    .iter()
                    .zip(&mb)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                // Within-class spread is 0.2 over 100 samples/class.
                assert!(diff < 0.2, "class {class} means differ by {diff}");
            }
        }
    }

    #[test]
    fn rejects_oversized_subspace() {
        let spec = ShiftSpec {
            feature_dim: 624,
            subspace_dim: 624,
            ..ShiftSpec::new("M", 4, 0, 0)
        };
        assert!(generate_synthetic::<f64>(&spec, &sizes(&[("a", 10)])).is_err());
    }

    #[test]
    fn rejects_nonpositive_noise() {
        let spec = ShiftSpec {
            noise_scale: 0.0,
            ..ShiftSpec::new("M", 4, 0, 0)
        };
        assert!(generate_synthetic::<f64>(&spec, &sizes(&[("a", 10)])).is_err());
    }
}
