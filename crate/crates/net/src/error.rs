use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("frame too large: {0} bytes")]
    FrameTooLarge(u32),

    #[error("authentication failed")]
    AuthFailed,

    #[error("broker error: {0}")]
    Broker(String),

    #[error("timed out waiting for {0}")]
    Timeout(String),

    #[error("round {round} failed: {msg}")]
    RoundFailed { round: u32, msg: String },

    #[error(transparent)]
    Core(#[from] fedtp_core::CoreError),
}

pub type Result<T> = std::result::Result<T, NetError>;
