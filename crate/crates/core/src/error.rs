use std::io;

use thiserror::Error;

/// Errors produced anywhere in the unmixing engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("endmember separation not reached after {retries} retries (min SAD {best:.4} rad)")]
    Separation { retries: usize, best: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("stale or mismatched forward cache: {0}")]
    StaleCache(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("threshold unreachable: estimated success probability is zero")]
    UnreachableThreshold,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidInput(_) => "invalid_input",
            Error::DegenerateSpectrum(_) => "degenerate_spectrum",
            Error::Separation { .. } => "separation",
            Error::Format(_) => "format",
            Error::Divergence { .. } => "divergence",
            Error::StaleCache(_) => "stale_cache",
            Error::Precondition(_) => "precondition",
            Error::UnreachableThreshold => "unreachable_threshold",
            Error::Config(_) => "config",
            Error::MissingData(_) => "missing_data",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Returns a `Dimension` error unless `cond` holds.
pub(crate) fn ensure_dims(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Dimension(msg()))
    }
}
