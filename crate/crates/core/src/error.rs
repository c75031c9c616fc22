use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("point outside the domain: {0}")]
    Domain(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("invalid configuration: {0}")]
    Configuration(String),

    #[error("model selection failed: {0}")]
    Selection(String),

    #[error("repetition {rep} failed: {source}")]
    Repetition {
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

impl Error {
    /// Stable lowercase tag of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Domain(_) => "domain",
            Error::Evaluation(_) => "evaluation",
            Error::Configuration(_) => "configuration",
            Error::Selection(_) => "selection",
            Error::Repetition { .. } => "repetition",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
