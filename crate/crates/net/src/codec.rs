//! Wire encoding: length-prefixed JSON frames and the weight-message
//! schema.
//!
//! Frames are a 4-byte big-endian payload length followed by UTF-8 JSON.
//! Model parameters travel as nested JSON arrays; `f64` values print in
//! their shortest round-trippable form, so params survive the wire
//! bit-exactly.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fedtp_core::fl::StrategyConfig;
use fedtp_core::nn::DenseLayer;
use fedtp_core::Model;

use crate::error::{NetError, Result};

/// Upper bound on a frame payload; a full 624/175/125/50-class model is a
/// few MB of JSON.
pub const MAX_FRAME_LEN: u32 = 256 * 1024 * 1024;

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    let payload = serde_json::to_vec(value).map_err(|e| NetError::Codec(e.to_string()))?;
    let len = u32::try_from(payload.len()).map_err(|_| NetError::FrameTooLarge(u32::MAX))?;
    if len > MAX_FRAME_LEN {
        return Err(NetError::FrameTooLarge(len));
    }
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read, T: DeserializeOwned>(r: &mut R) -> Result<T> {
    let mut len_buf = [0u8; 4];
    r.read_exact(&mut len_buf)?;
    let len = u32::from_be_bytes(len_buf);
    if len > MAX_FRAME_LEN {
        return Err(NetError::FrameTooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    serde_json::from_slice(&payload).map_err(|e| NetError::Codec(e.to_string()))
}

/// JSON shape of one dense layer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireLayer {
    /// `out_dim` rows of `in_dim` columns.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// JSON shape of a full model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireModel {
    pub base_cut: usize,
    /// `(in_dim, out_dim)` per layer, duplicated from the arrays for cheap
    /// validation.
    pub dims: Vec<(usize, usize)>,
    pub layers: Vec<WireLayer>,
}

impl WireModel {
    pub fn from_model(model: &Model) -> Self {
        let dims = model.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect();
        let layers = model
            .layers
            .iter()
            .map(|l| WireLayer {
                weights: (0..l.out_dim)
                    .map(|o| l.weight_row(o).to_vec())
                    .collect(),
                bias: l.bias.clone(),
            })
            .collect();
        Self {
            base_cut: model.base_cut,
            dims,
            layers,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.layers.is_empty() {
            return Err(NetError::Codec("model has no layers".into()));
        }
        if self.dims.len() != self.layers.len() {
            return Err(NetError::Codec("dims do not match layer count".into()));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, (layer, &(in_dim, out_dim))) in
            self.layers.into_iter().zip(self.dims.iter()).enumerate()
        {
            if layer.weights.len() != out_dim || layer.bias.len() != out_dim {
                return Err(NetError::Codec(format!(
                    "layer {i}: expected {out_dim} rows/biases"
                )));
            }
            let mut weights = Vec::with_capacity(in_dim * out_dim);
            for row in &layer.weights {
                if row.len() != in_dim {
                    return Err(NetError::Codec(format!(
                        "layer {i}: row width {} != in_dim {in_dim}",
                        row.len()
                    )));
                }
                weights.extend_from_slice(row);
            }
            layers.push(DenseLayer {
                weights,
                bias: layer.bias,
                in_dim,
                out_dim,
            });
        }
        let model = Model {
            layers,
            base_cut: self.base_cut,
        };
        model
            .validate()
            .map_err(|e| NetError::Codec(e.to_string()))?;
        Ok(model)
    }
}

/// Serialize model parameters to standalone JSON bytes (the same schema the
/// weight messages embed).
pub fn serialize_params(model: &Model) -> Result<Vec<u8>> {
    serde_json::to_vec(&WireModel::from_model(model)).map_err(|e| NetError::Codec(e.to_string()))
}

pub fn deserialize_params(bytes: &[u8]) -> Result<Model> {
    let wire: WireModel =
        serde_json::from_slice(bytes).map_err(|e| NetError::Codec(e.to_string()))?;
    wire.into_model()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sender {
    Server,
    Client(u32),
}

/// The envelope every model exchange travels in. Server->client messages
/// carry hyper-parameters and the sampled-client list; client->server
/// messages carry `n_k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightMessage {
    pub round: u32,
    /// Domain-group tag used as the routing key.
    pub routing_key: String,
    pub sender: Sender,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_k: Option<u64>,
    pub payload: WireModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<ServerHyperparams>,
}

/// Strategy configuration and scheduling info a server node publishes with
/// every model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ServerHyperparams {
    pub strategy: StrategyConfig,
    pub master_seed: u64,
    /// Clients sampled this round for the message's group.
    pub sampled: Vec<u32>,
}
