use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time grid needs at least 2 steps, got {0}")]
    GridTooCoarse(usize),
    #[error("{name} must satisfy {constraint}, got {value}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("cross-covariance operator norm must be < 1, got {0}")]
    CrossCovarianceTooStrong(f64),
    #[error("volterra kernel must be lower triangular")]
    NotLowerTriangular,
    #[error("operator norm {0} exceeds 1: not a contraction")]
    NotAContraction(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dense tensor workspace too large ({0} entries)")]
    TensorTooLarge(usize),
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
    #[error("drift too strong for an absolutely continuous change of measure: contraction factor {0} >= 1")]
    DriftTooStrong(f64),
    #[error("explicit step unstable: dt = {dt} exceeds the dr^2/2 limit {limit}")]
    CflViolated { dt: f64, limit: f64 },
    #[error("singular transform: det(I + M) = {0} is not positive")]
    SingularTransform(f64),
    #[error("flow inversion failed: forward-map residual {0}")]
    InversionFailed(f64),
    #[error("malformed chaos vector data: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
