use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("scenario space has no measures")]
    EmptyMeasureSet,

    #[error("invalid probability measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("CFL condition violated: dt = {dt:.6e} exceeds stable limit {limit:.6e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("oracle is not sublinear: {0}")]
    NotSublinear(String),

    #[error(
        "enumeration would visit {states} states (bound {bound}); switch the tree backend to grid_dp"
    )]
    StateExplosion { states: u128, bound: u128 },

    #[error("integrand partition does not refine the tree time grid: {0}")]
    PartitionMismatch(String),

    #[error("step index {index} out of range 0..={max}")]
    StepOutOfRange { index: usize, max: usize },

    #[error("volatility control leaves the band [{lo}, {hi}]: theta = {theta}")]
    ControlOutOfBand { theta: f64, lo: f64, hi: f64 },

    #[error("empty control list")]
    EmptyControls,

    #[error("fixed point is not a contraction: {0}")]
    NonContraction(String),

    #[error("iteration limit {max_iter} exceeded; last ratio {last_ratio:.4}")]
    MaxIterExceeded { max_iter: usize, last_ratio: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
