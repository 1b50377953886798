use thiserror::Error;

pub type Result<T, E = ExqError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ExqError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("root bracketing failed for target {target} (last bracket [{lo}, {hi}])")]
    BracketFailure { target: f64, lo: f64, hi: f64 },

    #[error("conditional inversion failed at x = {x}, u = {u}")]
    InversionFailure { x: f64, u: f64 },

    #[error("infeasible angular weights: pinned weight {index} resolved to {value}")]
    InfeasibleWeights { index: usize, value: f64 },

    #[error("empty sample: {0}")]
    EmptySample(&'static str),

    #[error("no exceedances above the intermediate quantile (threshold level too high)")]
    NoExceedances,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("out-of-bag prediction undefined for training index {0}: every tree used it")]
    OobUndefined(usize),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("training diverged at epoch {0} (non-finite loss twice in a row)")]
    Divergence(usize),

    #[error("unknown scenario id {0} (expected 1..=4)")]
    UnknownScenario(u32),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ExqError {
    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ExqError::BracketFailure { .. }
                | ExqError::InversionFailure { .. }
                | ExqError::Divergence(_)
                | ExqError::RankDeficient
                | ExqError::InfeasibleWeights { .. }
        )
    }
}
