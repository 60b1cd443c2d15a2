use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported size {height}x{width}: plane dimensions must be powers of two")]
    UnsupportedSize { height: usize, width: usize },

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("singular field: {0}")]
    Singularity(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence(_) | Error::Singularity(_) | Error::DivisionByZero(_)
        )
    }
}
