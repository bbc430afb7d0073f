use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("duplicate product id {0:?}")]
    DuplicateProductId(String),

    #[error("product id must be non-empty")]
    EmptyProductId,

    #[error("product {product:?} has an alias that is empty after normalization")]
    EmptyAlias { product: String },

    #[error("unknown product id {0:?}")]
    UnknownProduct(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vocabulary would have {size} entries, need at least 5 (empty corpus?)")]
    VocabTooSmall { size: usize },

    #[error("block contains only padding")]
    EmptyBlock,

    #[error("empty training split")]
    EmptyTrainingSplit,

    #[error("no judged rows in annotation sheet")]
    NoJudgedRows,

    #[error("non-finite loss at epoch {epoch}, step {step}; learning rate too high?")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("{what} hash mismatch: expected {expected}, found {found}")]
    HashMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
