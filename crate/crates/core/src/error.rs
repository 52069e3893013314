use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token id {token} at position {position} is outside the vocabulary of size {vocab_size}")]
    UnknownToken {
        token: usize,
        position: usize,
        vocab_size: usize,
    },

    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),

    #[error("sentence of length {0} cannot be derived (length must be at least 2)")]
    SentenceTooShort(usize),

    #[error("oracle limit exceeded: {0}")]
    OracleLimit(String),

    #[error("sampling budget exhausted after {attempts} attempts (max_nodes = {max_nodes}); the grammar is likely supercritical")]
    SamplingBudget { attempts: usize, max_nodes: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss at step {step}: sentence {sentence} has log_z = {log_z}")]
    NonFiniteLoss {
        step: usize,
        sentence: usize,
        log_z: f64,
    },

    #[error("sentence {index}: {source}")]
    Sentence {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad file format: {field}: {message}")]
    Format { field: String, message: String },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_sentence(self, index: usize) -> Self {
        Error::Sentence {
            index,
            source: Box::new(self),
        }
    }
}
