use thiserror::Error;

/// Errors raised across the library.
///
/// Variants are grouped by the CLI exit code they map to: configuration and
/// usage problems (2), data or domain violations (3) and numeric failures (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported document version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}{}",
        column.map(|c| format!(" (parameter column {c})")).unwrap_or_default()
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        column: Option<usize>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Version { .. } | Error::Io(_) => 2,
            Error::Parse(_) => 2,
            Error::Domain(_) | Error::Dimension(_) => 3,
            Error::Numeric(_) | Error::NonFiniteLoss { .. } => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
