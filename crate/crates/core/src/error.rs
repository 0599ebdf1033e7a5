use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("basis needs K >= 2 to form a cubic basis, got {0}")]
    BasisTooSmall(usize),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("all state densities vanish at time index {0}")]
    ZeroLikelihood(usize),
    #[error("transition matrix has no unique stationary distribution")]
    SingularChain,
    #[error("variance is zero")]
    ZeroVariance,
    #[error("all {restarts} restarts failed: {diagnostics}")]
    FitFailed { restarts: usize, diagnostics: String },
    #[error("too few usable replicates: need {needed}, have {have}")]
    TooFewReplicates { needed: usize, have: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
