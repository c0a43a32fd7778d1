use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported size: {what} = {got} (supported: {supported})")]
    UnsupportedSize {
        what: &'static str,
        got: usize,
        supported: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("Gram matrix is numerically singular at k = {k}, z = {z}")]
    SingularParameter { k: usize, z: f64 },

    /// The (n, T) pair lies outside the regime where a formula holds.
    #[error("regime error: {0}")]
    Regime(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("empty experiment: {0}")]
    EmptyExperiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse grouping used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Regime,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter(_) => ErrorClass::Usage,
            Error::Io(_) | Error::Parse { .. } => ErrorClass::Io,
            _ => ErrorClass::Regime,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
