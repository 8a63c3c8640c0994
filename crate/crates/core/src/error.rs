use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("mask is not binary: {0}")]
    NotBinary(String),
    #[error("duplicate category: {0}")]
    DuplicateCategory(String),
    #[error("invalid outfit: {0}")]
    InvalidOutfit(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("rule version mismatch: expected {expected}, found {found}")]
    RuleVersion { expected: String, found: String },
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("checkpoint version {0} is not supported")]
    Version(u32),
    #[error("config hash mismatch: checkpoint has {found}, current config is {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("missing: {0}")]
    Missing(String),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Problems with the caller's input, as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::LengthMismatch(_)
                | Error::OutOfRange(_)
                | Error::NotBinary(_)
                | Error::DuplicateCategory(_)
                | Error::InvalidOutfit(_)
                | Error::SizeMismatch(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
