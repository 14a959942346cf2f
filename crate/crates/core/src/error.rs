use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("resource limit: {0}")]
    Resource(String),

    /// The requested quantity is undefined for these constants, e.g. an
    /// average dwell time when C = 1.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("classification: {0}")]
    Classification(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
