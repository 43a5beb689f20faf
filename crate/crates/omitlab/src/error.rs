//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by any omitlab operation.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// An input value violates a physical or structural precondition.
    /// `field` names the offending quantity.
    #[error("invalid {field}: {reason}")]
    Domain { field: &'static str, reason: String },

    /// A numerical procedure failed to converge or hit a singular point.
    #[error("numerical failure in {context}: {reason}")]
    Numerical {
        context: &'static str,
        reason: String,
    },

    /// A configuration file could not be parsed or validated.
    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    /// A spectrum has no usable feature to seed a fit from.
    #[error("cannot seed fit: {0}")]
    Seeding(String),
}

impl Error {
    pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn numerical(context: &'static str, reason: impl Into<String>) -> Self {
        Error::Numerical {
            context,
            reason: reason.into(),
        }
    }
}
