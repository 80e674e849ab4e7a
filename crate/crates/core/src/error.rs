use thiserror::Error;

/// Errors raised by fitting, evidence and experiment routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArisError {
    #[error("column {0} has zero 2-norm")]
    ZeroNormColumn(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in input: {0}")]
    NonFiniteInput(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid hyper-parameter: {0}")]
    InvalidHyper(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("sigma^2 must be strictly positive, got {0}")]
    NonPositiveSigma2(f64),
    #[error("coordinate {0} has infinite precision; restrict to the active set first")]
    InfinitePrecision(usize),
    #[error("linear system is singular or not positive definite")]
    SingularSystem,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("residual vanished: the model interpolates the data")]
    DegenerateResidual,
    #[error("exact fit encountered at iteration {0}")]
    ExactFit(usize),
    #[error("eta = -1/2 sits on the OLS boundary; the precision update is undefined")]
    EtaAtOlsBoundary,
    #[error("no usable initializer (OLS and ridge fallback both failed)")]
    NoInitializer,
    #[error("coordinate {0} of the previous iterate is exactly zero but not pruned")]
    ZeroCoordinate(usize),
    #[error("negative Hessian is not positive definite at the mode")]
    NonInteriorMode,
    #[error("evidence estimate is not finite")]
    NonFiniteEvidence,
    #[error("residual quadratic form S^2 is numerically non-positive")]
    NonPositiveS2,
    #[error("sampling box has zero volume")]
    EmptyBox,
    #[error("every Monte-Carlo integrand sample underflowed")]
    AllZeroIntegrand,
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("every grid point failed: {0}")]
    AllGridPointsFailed(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("replication {index} failed: {reason}")]
    ReplicationFailed { index: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, ArisError>;

impl From<std::io::Error> for ArisError {
    fn from(e: std::io::Error) -> Self {
        ArisError::Io(e.to_string())
    }
}
