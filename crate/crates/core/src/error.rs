use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A `Touch` row that contradicts the crossing data.
///
/// `row` is 1-based, matching the row numbering a user sees in a Touch file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("Touch row {row} ({a}, {b}) is erroneous: {reason}")]
pub struct TouchError {
    pub row: usize,
    pub a: usize,
    pub b: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("time parameter must be finite, got {0}")]
    NonFiniteTime(f64),
    #[error("matrix has non-finite entries")]
    NonFiniteMatrix,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("similarity matrix is singular or too ill-conditioned (condition estimate {0:e})")]
    SingularSimilarity(f64),
    #[error("block join needs at least one flow")]
    EmptyBlockJoin,
    #[error("index range {lo}..={hi} is not inside 1..={n}")]
    IndexRange { lo: usize, hi: usize, n: usize },
    #[error("unknown gallery flow `{0}`")]
    UnknownFlow(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("order {order} is infeasible with {past} past points; the maximal achievable order is {max}")]
    InfeasibleFormula {
        order: usize,
        past: usize,
        max: usize,
    },
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("traces are complex-valued (max |Im| = {0:e}); use near-approach analysis instead")]
    ComplexTraces(f64),
    #[error("traces do not share a common time grid")]
    GridMismatch,
    #[error("curve index {index} outside 1..={n}")]
    CurveIndex { index: usize, n: usize },
    #[error(transparent)]
    Touch(#[from] TouchError),
    #[error("constraints are infeasible: curves {0} and {1} must both separate and unite")]
    Infeasible(usize, usize),
    #[error("session: {0}")]
    Session(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
