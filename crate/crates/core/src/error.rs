use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants map onto the command-line exit-code contract through
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter outside its physical or mathematical domain.
    #[error("domain: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data (CSV, timestamp files, tallies).
    #[error("data: {0}")]
    Data(String),

    /// Not enough counts to form an estimate.
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),

    /// Bad command-line or configuration usage.
    #[error("usage: {0}")]
    Usage(String),

    /// An iterative solver stopped without meeting its tolerance.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::NonConvergence(_) => 3,
            _ => 2,
        }
    }

    /// Short machine-parsable tag used in `error: <code>: <message>` lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Data(_) | Error::Csv(_) => "data",
            Error::InsufficientStatistics(_) => "statistics",
            Error::Usage(_) => "usage",
            Error::NonConvergence(_) => "nonconvergence",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
