use thiserror::Error;

/// Errors raised by the library.
///
/// Numerical verdicts that are merely inconclusive are not errors; they are
/// carried in the report types ([`crate::Status`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular point: {0}")]
    Singular(String),
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("ill-defined: {0}")]
    IllDefined(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
