use thiserror::Error;

/// Errors produced by the estimation and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("leverage-singular design: observation {row} has leverage {leverage}")]
    LeverageSingular { row: usize, leverage: f64 },

    #[error("degrees of freedom exhausted: {params} parameters with {n} observations")]
    DegreesOfFreedom { params: usize, n: usize },

    #[error("treatment is collinear with the selected controls")]
    TreatmentCollinear,

    #[error("binary outcome is constant; logistic fit is separated")]
    Separation,

    #[error("arm too small: {0}")]
    ArmSize(String),

    #[error("no treated observations")]
    NoTreated,

    #[error("missing ground truth: {0}")]
    MissingTruth(&'static str),

    #[error("unknown design `{0}`; valid designs: {catalog}", catalog = crate::dgp::DesignId::catalog().join(", "))]
    UnknownDesign(String),

    #[error("unknown estimator `{0}`; valid estimators: {names}", names = crate::montecarlo::Estimator::names().join(", "))]
    UnknownEstimator(String),

    #[error("invalid input data: {0}")]
    Input(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
