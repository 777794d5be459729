use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integration diverged at step {step} in channel {channel}")]
    IntegrationDivergence { step: usize, channel: &'static str },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("sample size {got} below the required minimum {need}")]
    SampleSize { need: usize, got: usize },

    #[error("filter diverged at step {step}: {reason}")]
    FilterDivergence { step: usize, reason: String },

    #[error("numeric failure in {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("channel not found: {0}")]
    MissingChannel(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::IntegrationDivergence { .. } => "integration-divergence",
            Error::DegenerateSample(_) => "degenerate-sample",
            Error::SampleSize { .. } => "sample-size",
            Error::FilterDivergence { .. } => "filter-divergence",
            Error::Numeric { .. } => "numeric",
            Error::Config(_) => "config",
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => "io",
            Error::Json(e) if e.is_io() => "io",
            Error::Format(_) | Error::Json(_) | Error::Csv(_) => "format",
            Error::MissingChannel(_) => "missing-channel",
            Error::Empty(_) => "empty-input",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }
}
