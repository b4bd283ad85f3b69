use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("SPD factorization failed for every jitter value (last tried {last_jitter:e})")]
    FactorizationFailed { last_jitter: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("non-finite input value")]
    NonFiniteInput,

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("class `{0}` has no embeddings")]
    EmptyClass(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("invalid responsibilities: {0}")]
    InvalidResponsibilities(String),

    #[error("soft count {count:e} of class {class} is below the degeneracy threshold")]
    DegenerateClass { class: usize, count: f64 },

    #[error("query set is empty")]
    EmptyQuery,

    #[error("dataset has {available} classes, need at least {required}")]
    InsufficientClasses { required: usize, available: usize },

    #[error("class `{class}` has {available} embeddings, need at least {required}")]
    InsufficientExamples {
        class: String,
        required: usize,
        available: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("episode {index} failed: {source}")]
    Episode {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for configuration errors, 3 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidSpec(_) => 2,
            Error::Episode { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
