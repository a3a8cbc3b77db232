use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("noise calibration failed: {0}")]
    Calibration(String),

    #[error("no analytic effect available for setting {0}")]
    UnsupportedAnalytic(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Validation-class errors map to CLI exit code 1; the rest are runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse(_) | Error::Domain(_) | Error::UnsupportedAnalytic(_)
        )
    }
}
