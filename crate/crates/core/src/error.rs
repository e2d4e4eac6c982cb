use thiserror::Error;

#[derive(Debug, Error)]
pub enum LcvxError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solution is not optimal (status {0})")]
    NotOptimal(String),

    /// More violating grid points than the theoretical bound allows while every
    /// assumption passed. This points at an implementation bug.
    #[error("theory violation: {count} violating grid points exceed the bound {bound}")]
    TheoryViolation { count: usize, bound: usize },

    #[error("scenario error at line {line}: {message}")]
    Scenario { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T, E = LcvxError> = std::result::Result<T, E>;
