use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("feature index {index} outside 1..={dim}")]
    IndexOutOfRange { index: u32, dim: usize },

    #[error("dimension mismatch: model has D={model}, data has D={data}")]
    DimensionMismatch { model: usize, data: usize },

    #[error("classification label {0} is not +1 or -1")]
    InvalidLabel(f64),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("engine failure: {0}")]
    Engine(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
