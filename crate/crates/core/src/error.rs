use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("probabilities sum to {sum}, expected 1 (tolerance {tol:e})")]
    NotNormalized { sum: f64, tol: f64 },
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("zero source prior for class {0}")]
    ZeroSourcePrior(usize),
    #[error("vanishing posterior mass")]
    VanishingPosteriorMass,
    #[error("undefined log-ratio for class {class} at row {row}")]
    UndefinedLogRatio { class: usize, row: usize },
    #[error("zero source density at row {0}")]
    ZeroSourceDensity(usize),
    #[error("infeasible transport problem: marginal masses {0} and {1} differ")]
    InfeasibleMarginals(f64, f64),
    #[error("zero diameter: all cross distances vanish")]
    ZeroDiameter,
    #[error("singular matrix")]
    Singular,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
