//! Multi-domain datasets: feature tables tagged by domain group, domain and
//! class, a synthetic generator with controllable domain shift, CSV
//! ingestion, and the client partitioning schemes.

pub mod csv_io;
pub mod partition;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fl::GroupId;
use crate::nn::{evaluate, Minibatch, ModelParams};
use crate::scalar::Scalar;

pub use csv_io::{
    load_csv, load_csv_with_dim, save_csv, DatasetManifest, DomainFileEntry, EXPECTED_FEATURES,
};
pub use partition::{
    kfold_splits, partition, ClientAssignment, PartitionMode, PartitionPlan,
    CLIENTS_PER_DOMAIN, UNBALANCED_WEIGHTS_LARGE, UNBALANCED_WEIGHTS_SMALL,
};
pub use synth::{generate_synthetic, ShiftSpec};

/// Row-major labeled feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<T> {
    pub features: Vec<T>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub num_classes: usize,
}

impl<T: Scalar> Samples<T> {
    pub fn new(features: Vec<T>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(CoreError::Empty("samples".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(CoreError::DimMismatch(format!(
                "feature storage {} != {} rows x {} columns",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("features".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(CoreError::InvalidConfig(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Copy the given rows into a new table.
    pub fn gather(&self, idx: &[usize]) -> Samples<T> {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Samples {
            features,
            labels,
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Concatenate tables with matching shape metadata.
    pub fn concat<'a, I: IntoIterator<Item = &'a Samples<T>>>(parts: I) -> Result<Samples<T>> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| CoreError::Empty("concat of zero tables".into()))?;
        let mut out = first.clone();
        for part in iter {
            if part.dim != out.dim || part.num_classes != out.num_classes {
                return Err(CoreError::DimMismatch(
                    "cannot pool tables with different shapes".into(),
                ));
            }
            out.features.extend_from_slice(&part.features);
            out.labels.extend_from_slice(&part.labels);
        }
        Ok(out)
    }

    pub fn minibatch(&self, idx: &[usize]) -> Result<Minibatch<T>> {
        let g = self.gather(idx);
        Minibatch::new(g.features, g.labels, g.dim)
    }

    /// Classification accuracy of `params` on this table.
    pub fn accuracy(&self, params: &ModelParams<T>) -> Result<f64> {
        evaluate(params, &self.features, &self.labels)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// A labeled feature table belonging to one domain of one domain group.
/// `origin` tracks, for every row, its index in the parent domain table, so
/// shard disjointness and target isolation stay checkable after splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset<T> {
    pub group: GroupId,
    pub domain: String,
    pub data: Samples<T>,
    pub origin: Vec<usize>,
}

impl<T: Scalar> DomainDataset<T> {
    pub fn new(group: GroupId, domain: impl Into<String>, data: Samples<T>) -> Self {
        let origin = (0..data.len()).collect();
        Self {
            group,
            domain: domain.into(),
            data,
            origin,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Sub-dataset of the given rows, carrying provenance forward.
    pub fn shard(&self, idx: &[usize]) -> DomainDataset<T> {
        DomainDataset {
            group: self.group.clone(),
            domain: self.domain.clone(),
            data: self.data.gather(idx),
            origin: idx.iter().map(|&i| self.origin[i]).collect(),
        }
    }
}

/// Descriptor for one domain group's synthetic data (name, class count and
/// per-domain sizes), used by experiment configs and `gen-data`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupSpec {
    pub name: String,
    pub num_classes: usize,
    pub domains: Vec<DomainSize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainSize {
    pub name: String,
    pub size: usize,
}

impl GroupSpec {
    pub fn domain_names(&self) -> Vec<&str> {
        self.domains.iter().map(|d| d.name.as_str()).collect()
    }
}

/// The domain-group layout the default benchmark mirrors: a 4-class group of
/// four 200-sample domains and a 3-class group of three 90-sample domains.
pub fn default_group_m() -> GroupSpec {
    GroupSpec {
        name: "M".into(),
        num_classes: 4,
        domains: ["Al-Cu", "Cu-Cu", "Cu-Al", "Al-Al"]
            .into_iter()
            .map(|name| DomainSize {
                name: name.into(),
                size: 200,
            })
            .collect(),
    }
}

pub fn default_group_s() -> GroupSpec {
    GroupSpec {
        name: "S".into(),
        num_classes: 3,
        domains: ["Clean", "Polished", "Contam"]
            .into_iter()
            .map(|name| DomainSize {
                name: name.into(),
                size: 90,
            })
            .collect(),
    }
}

pub fn default_group_t() -> GroupSpec {
    GroupSpec {
        name: "T".into(),
        num_classes: 3,
        domains: ["DMGD", "New", "Worn"]
            .into_iter()
            .map(|name| DomainSize {
                name: name.into(),
                size: 90,
            })
            .collect(),
    }
}
