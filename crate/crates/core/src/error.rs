use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    /// Malformed or out-of-range input (bad token id, empty dataset, shape mismatch).
    #[error("input error: {0}")]
    Input(String),
    /// A non-finite value appeared where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// The operation is not defined for the given variant or arguments.
    #[error("contract error: {0}")]
    Contract(String),
    /// Invalid configuration; `field` names the offending entry.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    /// The request exceeds what exact computation supports.
    #[error("capability error: {0}")]
    Capability(String),
    /// A synthetic task could not be generated as requested.
    #[error("task error: {0}")]
    Task(String),
    /// The max-margin problem has no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("io error: {0}")]
    Io(String),
}

impl LabError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
