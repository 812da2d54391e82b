use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (bad ranges, too-short runs, unknown options).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or unusable market data.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values or other numerical breakdowns.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Operand shapes that do not fit the primitive being applied.
    #[error("dimension error in `{op}`: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// API misuse, e.g. calling backward on a non-scalar node.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::Numeric(_) | Error::Dimension { .. } => 4,
        }
    }
}
