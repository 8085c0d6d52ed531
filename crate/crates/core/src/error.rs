use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: expected {expected}, got {actual} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("token {token} out of range 1..={vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("oracle size exceeded: T+U = {size} > cap {cap}")]
    OracleTooLarge { size: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reference missing from hypothesis set")]
    MissingReference,

    #[error("cached forward pass is stale (params version {cached}, now {current})")]
    StaleCache { cached: u64, current: u64 },

    #[error("checkpoint version error: {0}")]
    CheckpointVersion(String),

    #[error("checkpoint is corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown {kind} strategy '{name}' (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used as the CLI exit payload.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "E_EMPTY",
            Error::LengthMismatch { .. } => "E_LENGTH",
            Error::TokenOutOfRange { .. } => "E_TOKEN",
            Error::OracleTooLarge { .. } => "E_ORACLE_SIZE",
            Error::InvalidArgument(_) => "E_ARG",
            Error::MissingReference => "E_NO_REF",
            Error::StaleCache { .. } => "E_STALE",
            Error::CheckpointVersion(_) => "E_CKPT_VERSION",
            Error::CheckpointCorrupt(_) => "E_CKPT_CORRUPT",
            Error::NonFinite(_) => "E_DIVERGED",
            Error::UnknownStrategy { .. } => "E_STRATEGY",
            Error::Config(_) => "E_CONFIG",
            Error::Dataset(_) => "E_DATASET",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }
}
