use std::path::PathBuf;

/// Errors raised by the pipeline. Exit codes: 0 ok, 2 config error,
/// 3 parse error, 4 invariant violation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {detail} (at {location})")]
    Parse {
        path: PathBuf,
        location: String,
        detail: String,
    },

    #[error("invariant violation in {entity}: {detail}")]
    Invariant { entity: String, detail: String },

    #[error("key view {key}: only {connected} connected cameras, need at least {needed}")]
    InsufficientConnectivity {
        key: u32,
        connected: usize,
        needed: usize,
    },

    #[error("invalid cluster: {0}")]
    InvalidCluster(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invariant(entity: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Invariant {
            entity: entity.into(),
            detail: detail.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } => 3,
            Error::Invariant { .. } => 4,
            Error::InsufficientConnectivity { .. } => 4,
            Error::InvalidCluster(_) => 4,
            Error::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
