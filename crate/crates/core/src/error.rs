use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the estimators can report.
///
/// Variants carry enough context to point at the offending subject, time or
/// file line. [`Error::invariant`] gives a stable machine-readable name used
/// in the CLI's error JSON.
#[derive(Debug, Error)]
pub enum Error {
    #[error("subject {subject}: event times not strictly increasing at t={time}")]
    NonMonotoneTimes { subject: String, time: f64 },
    #[error("subject {subject}: transition at t={time} starts in state {from} but the subject is in state {current}")]
    BrokenChain {
        subject: String,
        time: f64,
        from: usize,
        current: usize,
    },
    #[error("subject {subject}: transition at t={time} out of absorbing state {state}")]
    TransitionFromAbsorbing {
        subject: String,
        time: f64,
        state: usize,
    },
    #[error("subject {subject}: event at t={time} after end of observation {end}")]
    EventAfterCensoring { subject: String, time: f64, end: f64 },
    #[error("subject {subject}: {reason}")]
    InvalidHistory { subject: String, reason: String },
    #[error("histories do not share one state space and horizon")]
    MixedStateSpaces,
    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),
    #[error("invalid step function: {0}")]
    InvalidStepFunction(String),
    #[error("empty sample")]
    EmptySample,
    #[error("stratum '{0}' has no subjects")]
    EmptyStratum(String),
    #[error("censoring survival is zero at t={time} (stratum {stratum})")]
    ZeroCensoringSurvival { time: f64, stratum: String },
    #[error("observed {from}->{to} transition at t={time} with an empty risk set")]
    JumpWithEmptyRiskSet { from: usize, to: usize, time: f64 },
    #[error("product-integral factor at t={time} has negative entry in row {row}")]
    InvalidFactor { time: f64, row: usize },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("monotone likelihood: coefficient norm {norm:.3} exceeded bound {bound}")]
    MonotoneLikelihood { norm: f64, bound: f64 },
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("no observed transitions")]
    NoEvents,
    #[error("cost accrues at t={0} with an empty risk set")]
    EmptyRiskSetAtAccrual(f64),
    #[error("cost panels do not share a common grid")]
    GridMismatch,
    #[error("interval starting at {0} has observed cost but an empty risk set")]
    EmptyRiskSetAtInterval(f64),
    #[error("design matrix is singular or rank deficient")]
    SingularDesign,
    #[error("working covariance for subject {0} is not positive definite")]
    NonPositiveDefiniteOmega(String),
    #[error("working matrix is singular")]
    SingularWorkingMatrix,
    #[error("sandwich bread matrix A is singular")]
    SingularA,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("transition {from}->{to} has events but no cost model")]
    MissingCostModel { from: usize, to: usize },
    #[error("survival curve has no jumps on (0, {0}]")]
    NoJumps(f64),
    #[error("unknown covariate '{0}'")]
    UnknownCovariate(String),
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{file}:{line}: {message}")]
    Schema {
        file: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable name of the violated invariant or failure class.
    pub fn invariant(&self) -> &'static str {
        match self {
            Error::NonMonotoneTimes { .. } => "NonMonotoneTimes",
            Error::BrokenChain { .. } => "BrokenChain",
            Error::TransitionFromAbsorbing { .. } => "TransitionFromAbsorbing",
            Error::EventAfterCensoring { .. } => "EventAfterCensoring",
            Error::InvalidHistory { .. } => "InvalidHistory",
            Error::MixedStateSpaces => "MixedStateSpaces",
            Error::InvalidStateSpace(_) => "InvalidStateSpace",
            Error::InvalidStepFunction(_) => "InvalidStepFunction",
            Error::EmptySample => "EmptySample",
            Error::EmptyStratum(_) => "EmptyStratum",
            Error::ZeroCensoringSurvival { .. } => "ZeroCensoringSurvival",
            Error::JumpWithEmptyRiskSet { .. } => "JumpWithEmptyRiskSet",
            Error::InvalidFactor { .. } => "InvalidFactor",
            Error::NoConvergence(_) => "NoConvergence",
            Error::MonotoneLikelihood { .. } => "MonotoneLikelihood",
            Error::SingularInformation => "SingularInformation",
            Error::NoEvents => "NoEvents",
            Error::EmptyRiskSetAtAccrual(_) => "EmptyRiskSetAtAccrual",
            Error::GridMismatch => "GridMismatch",
            Error::EmptyRiskSetAtInterval(_) => "EmptyRiskSetAtInterval",
            Error::SingularDesign => "SingularDesign",
            Error::NonPositiveDefiniteOmega(_) => "NonPositiveDefiniteOmega",
            Error::SingularWorkingMatrix => "SingularWorkingMatrix",
            Error::SingularA => "SingularA",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::MissingCostModel { .. } => "MissingCostModel",
            Error::NoJumps(_) => "NoJumps",
            Error::UnknownCovariate(_) => "UnknownCovariate",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Schema { .. } => "SchemaError",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}
