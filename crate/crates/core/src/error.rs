use thiserror::Error;

/// Errors raised by the filtering and calibration routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("series truncation not certified: tail bound {bound:e} exceeds tolerance {tolerance:e} after {terms} terms")]
    TruncationNotCertified {
        bound: f64,
        tolerance: f64,
        terms: usize,
    },

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("state representation does not match model: {0}")]
    StateMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Prefixes the message with `label`, keeping the category.
    pub fn labeled(self, label: &str) -> Self {
        match self {
            Error::InvalidParameter { name, reason } => Error::InvalidParameter {
                name,
                reason: format!("{label}: {reason}"),
            },
            Error::InvalidInput(m) => Error::InvalidInput(format!("{label}: {m}")),
            Error::StateMismatch(m) => Error::StateMismatch(format!("{label}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{label}: {m}")),
            Error::Config(m) => Error::Config(format!("{label}: {m}")),
            Error::Io(m) => Error::Io(format!("{label}: {m}")),
            other => other,
        }
    }

    /// Short category tag, used for CLI diagnostics and exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } | Error::InvalidInput(_) => "input",
            Error::TruncationNotCertified { .. } | Error::Numerical(_) => "numerical",
            Error::NotPositiveSemidefinite { .. } => "numerical",
            Error::StateMismatch(_) => "model",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
