use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: {message}")]
    Validation { line: u64, message: String },

    #[error("degenerate day: all readings equal ({value})")]
    DegenerateDay { value: f64 },

    #[error("degenerate profile: zero variance")]
    DegenerateProfile,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {location}")]
    Numeric { location: String },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn numeric(location: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
        }
    }
}
