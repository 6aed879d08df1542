//! Error type shared across the engine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("csv error at row {row}: {msg}")]
    Csv { row: usize, msg: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("client {client_id}: {source}")]
    Client {
        client_id: u32,
        #[source]
        source: Box<CoreError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CoreError {
    /// Attach the originating client id to an error bubbling out of a
    /// local training step.
    pub fn for_client(self, client_id: u32) -> CoreError {
        CoreError::Client {
            client_id,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
