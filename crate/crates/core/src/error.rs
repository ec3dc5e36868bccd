use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grammar: {0}")]
    Grammar(String),

    #[error("unknown word `{word}` in slot {slot}")]
    UnknownWord { slot: usize, word: String },

    #[error("invalid noise profile: {0}")]
    NoiseProfile(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} has zero power")]
    ZeroPower { what: &'static str },

    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("insufficient training data: {0}")]
    InsufficientData(String),

    #[error("non-finite statistics: {0}")]
    NonFinite(String),

    #[error("no admissible path through the decoding network")]
    NoAdmissiblePath,

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("SRT out of range: {0}")]
    SrtOutOfRange(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl Error {
    /// Wraps the error with the stage it came from; config errors pass
    /// through unchanged so callers can still tell them apart.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ (Error::Config { .. } | Error::Stage { .. }) => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
