use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("sequence data only available up to index {available}, {needed} requested")]
    TruncationTooShort { needed: usize, available: usize },

    #[error("open-loop poles coincide at indices {first} and {second}")]
    DuplicatePole { first: usize, second: usize },

    #[error("evaluation point is within the pole guard of a_{index}")]
    PoleProximity { index: usize },

    #[error("value at index {index} is not finite")]
    NonFinite { index: usize },

    #[error("product for entry {index} diverged (log-magnitude {log_magnitude:.3} at m = {at_m})")]
    Diverged {
        index: usize,
        at_m: usize,
        log_magnitude: f64,
    },

    #[error("structured Vandermonde inverse refused for N = {0} (limit 8)")]
    ConditionGuard(usize),

    #[error("winding estimate {estimate:.4} does not snap to an integer (min |h| on contour {min_abs_h:.3e})")]
    WindingSnap { estimate: f64, min_abs_h: f64 },

    #[error("eigenvector candidate not normalizable: |k·v| = {0:.3e}")]
    NotNormalizable(f64),

    #[error("step size {dt} exceeds stability limit {limit}")]
    StepSize { dt: f64, limit: f64 },

    #[error("closed-form flow requires the self-consistent mirror regime: {0}")]
    NotMirrorRegime(String),

    #[error("no passing ratio certificate and no explicit decay constants supplied")]
    MissingCertificate,
}

pub type Result<T> = std::result::Result<T, Error>;
