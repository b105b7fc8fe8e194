use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed cascade record: {message}")]
    Parse { line: usize, message: String },

    #[error("cascade {id}: {message}")]
    InvalidCascade { id: String, message: String },

    #[error("duplicate cascade id {0:?}")]
    DuplicateId(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("checkpoint header is corrupt: {0}")]
    CorruptHeader(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("checkpoint shape table mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("non-finite value in tensor {tensor}")]
    NonFinite { tensor: String },

    #[error("training diverged at lr {lr}: {message}")]
    Diverged { lr: f64, message: String },

    #[error("no eligible cascades ({skipped} skipped)")]
    NoEligibleCascades { skipped: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for validation and configuration problems,
    /// 2 for runtime and numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::InvalidCascade { .. }
            | Error::DuplicateId(_)
            | Error::Config(_)
            | Error::InvalidInput(_)
            | Error::NoEligibleCascades { .. }
            | Error::ConfigMismatch(_) => 1,
            Error::Io { .. }
            | Error::CorruptHeader(_)
            | Error::UnsupportedVersion { .. }
            | Error::ShapeMismatch(_)
            | Error::TruncatedPayload { .. }
            | Error::NonFinite { .. }
            | Error::Diverged { .. } => 2,
        }
    }
}
