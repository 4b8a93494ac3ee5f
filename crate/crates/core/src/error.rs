use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("kissing disks are not internally tangent (defect {defect:.3e})")]
    TangencyViolation { defect: f64 },
    #[error("core disk is not strictly inside the outer disk: {0}")]
    OverlapError(String),
    #[error("point ({0}, {1}) lies outside the domain")]
    OutsideDomain(f64, f64),
    #[error("x1 = {x1} is outside the cusp chart (|x1| < {limit})")]
    OutOfChart { x1: f64, limit: f64 },
    #[error("mesh generation failed: {0}")]
    MeshFailure(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("eigenpair residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    NotConverged { residual: f64, tol: f64 },
    #[error("factorization hit a zero pivot at row {row} (pivot {pivot:.3e})")]
    FactorizationSingular { row: usize, pivot: f64 },
    #[error("eigensolver did not converge after {iterations} block steps (worst residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("limit eigenvalue is zero; c0 is undefined")]
    ZeroEigenvalue,
    #[error("Neumann data violate the compatibility condition (relative residual {0:.3e})")]
    CompatibilityViolation(f64),
    #[error("missing required field: {0}")]
    MissingField(&'static str),
    #[error("ambiguous eigenvalue matching: {0}")]
    MatchingAmbiguity(String),
    #[error("rate fit needs at least {needed} usable points, got {got}")]
    DegenerateFit { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
