use std::path::PathBuf;

/// Errors produced anywhere in the attribution stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid motion spec: {0}")]
    InvalidSpec(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown clip id {0}")]
    UnknownClip(u64),
    #[error("corrupt record: {0}")]
    CorruptRecord(String),
    #[error("clip has {0} frames, need at least 2")]
    ClipTooShort(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite activation in forward pass")]
    NonFiniteActivation,
    #[error("training loss became non-finite at step {step}")]
    DivergedLoss { step: usize },
    #[error("gradient norm below threshold for clip {0}")]
    ZeroGradient(u64),
    #[error("non-finite gradient for clip {0}")]
    NonFiniteGradient(u64),
    #[error("length {0} is not a power of two")]
    BadLength(usize),
    #[error("run fingerprint mismatch")]
    FingerprintMismatch,
    #[error("sketch store is empty")]
    EmptyStore,
    #[error("selection is empty")]
    EmptySelection,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rank correlation undefined for a constant vector")]
    ConstantVector,
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
