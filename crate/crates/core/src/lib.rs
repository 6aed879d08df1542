//! Federated learning engine with shared-base / per-group-head aggregation
//! (FTL-TP) alongside FedAvg, FedProx and FedL2R, non-federated baselines,
//! a synthetic multi-domain data generator, and a deterministic experiment
//! harness.
//!
//! The numeric core is generic over the scalar type via [`Scalar`]
//! (`f32`/`f64`); the crate-root aliases pin the default `f64` precision
//! used by the CLI, the wire codec and the checkpoints.

pub mod baselines;
pub mod data;
pub mod error;
pub mod fl;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod seed;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// Default scalar precision of the engine.
pub type Real = f64;

pub type Model = nn::ModelParams<Real>;
pub type Dataset = data::DomainDataset<Real>;
pub type Table = data::Samples<Real>;
pub type Client = fl::ClientSpec<Real>;
pub type Update = fl::ClientUpdate<Real>;
