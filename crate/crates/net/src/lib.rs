//! Networked deployment of the fedtp engine: a minimal direct-exchange
//! pub/sub broker, the server node driving federated rounds over it, and
//! client daemons training on edge data. Wire format: 4-byte big-endian
//! length prefix + UTF-8 JSON.

pub mod broker;
pub mod client_api;
pub mod client_node;
pub mod codec;
pub mod error;
pub mod server_node;

pub use broker::{
    broker_serve, BrokerFrame, BrokerHandle, BrokerStats, ClientFrame, CredentialStore,
    EXCHANGE_TO_CLIENTS, EXCHANGE_TO_SERVER,
};
pub use client_api::{BrokerClient, Delivery};
pub use client_node::{client_node, ClientNodeConfig, ClientNodeReport};
pub use codec::{
    deserialize_params, read_frame, serialize_params, write_frame, Sender, ServerHyperparams,
    WeightMessage, WireLayer, WireModel,
};
pub use error::{NetError, Result};
pub use server_node::{server_node, RosterEntry, ServerNodeConfig, SERVER_QUEUE};
