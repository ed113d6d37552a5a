//! Crate-wide error type.

/// Errors surfaced by any svprobe operation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input that the operation cannot meaningfully process, e.g. a
    /// zero vector handed to `normalize`.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("out of range: {0}")]
    OutOfRange(String),

    /// The oracle's query budget was exhausted. Carries the final ledger count.
    #[error("query budget exhausted after {count} queries")]
    BudgetExceeded { count: u64 },

    /// Greedy orthogonal-set construction ran out of pool members.
    #[error("orthogonal set infeasible: found {found} of {requested} members at delta {delta}")]
    InfeasibleDelta {
        found: usize,
        requested: usize,
        delta: f64,
    },

    /// Training loss became non-finite. Carries the loss history up to the failure.
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize, history: Vec<f64> },

    #[error("correlation undefined for zero-variance input")]
    UndefinedCorrelation,

    #[error("degenerate recovery: {0}")]
    DegenerateRecovery(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
