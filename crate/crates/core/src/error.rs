use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (relative residual {residual:e})")]
    NotHermitian { residual: f64 },

    #[error("trace {trace} differs from 1")]
    InvalidTrace { trace: f64 },

    #[error("smallest eigenvalue {min_eig:e} is below the positivity floor")]
    NotPositive { min_eig: f64 },

    #[error("vector norm {norm} differs from 1")]
    NotNormalized { norm: f64 },

    #[error("columns are not orthonormal (||U'U - I|| = {residual:e})")]
    NotIsometric { residual: f64 },

    #[error("low-rank factor is rank deficient (column {column} has residual norm {norm:e})")]
    DegenerateFactor { column: usize, norm: f64 },

    #[error("sigma is nearly singular (min eigenvalue {min_eig:e}); decrease the rank")]
    SingularFactor { min_eig: f64 },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("dimension {n} exceeds the oracle cap {cap}")]
    DimensionAboveCap { n: usize, cap: usize },

    #[error("no rank-increase direction: (I - P) L U vanishes")]
    NoDirection,

    #[error("candidate direction is not orthogonal to range(U) (overlap {overlap:e})")]
    NotOrthogonal { overlap: f64 },

    #[error("rank-increase seed must be strictly positive, got {delta}")]
    InvalidSeed { delta: f64 },

    #[error("cannot decrease the rank below 1")]
    CannotDecrease,

    #[error("sigma stayed singular at t = {t} with rank already at its minimum {m_min}")]
    PersistentSingularity { t: f64, m_min: usize },

    #[error("pathological stochastic step (post-step norm {norm:e})")]
    PathologicalStep { norm: f64 },

    #[error("trajectory {index}: {source}")]
    Trajectory { index: usize, source: Box<Error> },

    #[error("denominator 1 - tr(rho_lr^2) = {denominator:e} is degenerate")]
    DegenerateDenominator { denominator: f64 },

    #[error("model has {count} decoherence channels; this solver supports exactly one")]
    MultipleChannels { count: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
