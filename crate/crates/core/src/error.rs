use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A caller-supplied argument is out of its domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An object is used in a state that does not permit the operation.
    #[error("invalid state: {0}")]
    State(String),

    /// A binary file failed to parse.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// A run configuration failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shapes(op: &str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape(format!("{op}: {left:?} vs {right:?}"))
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
