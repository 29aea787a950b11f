use thiserror::Error;

/// Toolkit-wide error type.
///
/// Variants are grouped by the CLI exit code they map to: usage errors (1),
/// data errors (2), numeric failures (3).
#[derive(Debug, Error)]
pub enum Error {
    // usage
    #[error("invalid configuration key `{key}`: {reason}")]
    BadConfigKey { key: String, reason: String },
    #[error("missing required configuration key `{key}`")]
    MissingConfigKey { key: String },
    #[error("file not found: {0}")]
    FileNotFound(String),

    // data
    #[error("malformed record at line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("session `{session_id}` is missing domain `{domain}`")]
    MissingDomain { session_id: String, domain: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence too short for transitions")]
    SequenceTooShort,
    #[error("no item tokens in corpus")]
    NoItemTokens,
    #[error("empty sequence")]
    EmptySequence,
    #[error("training set too small: {have} examples, need at least {need}")]
    TrainSetTooSmall { have: usize, need: usize },
    #[error("training set contains a single class; need both labels")]
    SingleClass,
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("model fingerprint mismatch: model was trained against a different schema/embedding version")]
    FingerprintMismatch,
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    // numeric
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
}

impl Error {
    /// CLI exit code for this error (0 is reserved for success).
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            BadConfigKey { .. } | MissingConfigKey { .. } | FileNotFound(_) => 1,
            Diverged { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
