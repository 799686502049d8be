use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown label {label:?} (not in vocabulary)")]
    UnknownLabel { label: String },

    #[error("no logits for table {table_id:?} column {column_index}")]
    MissingLogits {
        table_id: String,
        column_index: usize,
    },

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
