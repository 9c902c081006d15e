use thiserror::Error;

/// Errors raised by the construction and measurement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("NotInInterior: {0}")]
    NotInInterior(String),
    #[error("NotTraceFree: trace {0:e}")]
    NotTraceFree(f64),
    #[error("DegenerateDirection: difference is not a symmetrized rank-one matrix")]
    DegenerateDirection,
    #[error("StageExhausted: j = {0} has no further split")]
    StageExhausted(usize),
    #[error("DegenerateSplit: target coordinate already placed (lambda = {0})")]
    DegenerateSplit(f64),
    #[error("BadParameter: {0}")]
    BadParameter(String),
    #[error("NotAligned: {0}")]
    NotAligned(String),
    #[error("BadAspect: ratio {ratio} expected {expected}")]
    BadAspect { ratio: f64, expected: f64 },
    #[error("SelfIntersecting: polygon edges {0} and {1} cross")]
    SelfIntersecting(usize, usize),
    #[error("NotARefinement: {0}")]
    NotARefinement(String),
    #[error("ExponentOutOfRange: s*p = {sp} must be below theta0 = {theta0}")]
    ExponentOutOfRange { sp: f64, theta0: f64 },
    #[error("BudgetExceeded: {cells} cells requested, budget {budget}")]
    BudgetExceeded { cells: usize, budget: usize },
    #[error("StageViolation: cell {cell}: {detail}")]
    StageViolation { cell: String, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
