use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("empty hidden states")]
    EmptyStates,
    #[error("no unmasked rows to pool")]
    NoUnmaskedRows,
    #[error("no landmark tokens")]
    NoLandmarks,
    #[error("no rows selected by stride {0}")]
    NoStrideRows(usize),
    #[error("no pooling token")]
    NoPoolingToken,
    #[error("no masked positions")]
    NoMaskedPositions,
    #[error("non-finite similarity at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("training diverged: non-finite parameters after step {0}")]
    Diverged(usize),
    #[error("too few chunks: need at least {needed}, got {got}")]
    TooFewChunks { needed: usize, got: usize },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
