use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("time column is not strictly increasing at row {row}")]
    NonMonotoneTime { row: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank-deficient system ({0} columns) with zero ridge penalty")]
    RankDeficient(usize),

    #[error("coefficient track does not cover sample {0}")]
    TrackGap(usize),

    #[error("trajectory left the domain at t = {t}")]
    DomainViolation { t: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for errors caused by the run configuration or its inputs rather
    /// than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Config(_)
                | Error::UnknownColumn(_)
                | Error::NonMonotoneTime { .. }
                | Error::InvalidInput(_)
        )
    }
}
