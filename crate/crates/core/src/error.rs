use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("eigensolver did not converge within {rotations} rotations")]
    NonConvergence { rotations: usize },

    #[error("vector norm below the underflow guard")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (entry ({row}, {col}))")]
    NotSymmetric { row: usize, col: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation requires exactly one constraint, found {found}")]
    WrongArity { found: usize },

    #[error("first homogeneous coordinate {value:e} is below the dehomogenization guard")]
    DegenerateFirstCoordinate { value: f64 },

    #[error("aggregate sparsity graph is not a forest")]
    NotAForest,

    #[error("edge list contains a cycle")]
    CycleDetected,

    #[error("instance does not have single-equality shape: {0}")]
    WrongShape(String),

    #[error("matrix pencil is singular on every sampled parameter")]
    IdenticallySingular,

    #[error("subpencil of size {size} is numerically singular")]
    SubpencilSingular { size: usize },

    #[error("SDP solver failure: {0}")]
    SolverFailure(String),

    #[error("Schur complement lost positive definiteness")]
    NumericalTrouble,

    #[error("relaxation is not certified exact")]
    NotCertified,

    #[error("rank-one recovery failed: {0}")]
    RecoveryFailed(String),

    #[error("no feasible point found")]
    NoFeasiblePointFound,

    #[error("instance format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
