use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or solver parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// An input vector or index set does not belong to the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The linear elasticity system could not be solved.
    #[error("singular stiffness system: {reason} (hint: {hint})")]
    SingularSystem { reason: String, hint: &'static str },

    /// The linearized constraint cannot be satisfied and has no usable gradient.
    #[error("infeasible linearization for constraint {row}: zero gradient with residual {residual:e}")]
    InfeasibleLinearization { row: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported problem: {0}")]
    Unsupported(String),

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
