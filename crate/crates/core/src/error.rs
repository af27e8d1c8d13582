use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("stiffness matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integration became unstable: {0}")]
    Unstable(String),

    #[error("reference cache: {0}")]
    Cache(String),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error rows.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::NonFinite(_) => "non_finite",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Unstable(_) => "unstable",
            Error::Cache(_) => "cache",
        }
    }
}

pub(crate) fn dim_err(what: impl Into<String>) -> Error {
    Error::Dimension(what.into())
}
