use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CqivError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular design: columns {columns:?} are linearly dependent on the effective sample")]
    SingularDesign { columns: Vec<String> },

    #[error("empty effective sample (no observation with positive weight)")]
    EmptySample,

    #[error("insufficient sample: {available} effective observations for {required} parameters")]
    InsufficientSample { available: usize, required: usize },

    #[error("perfect separation: linear index exceeded {bound} in magnitude while the likelihood kept improving")]
    Separation { bound: f64 },

    #[error("degenerate binary outcome: only one class present in the effective sample")]
    DegenerateOutcome,

    #[error("maximum likelihood did not converge after {iterations} iterations (gradient sup-norm {gradient_norm:e})")]
    Convergence { iterations: usize, gradient_norm: f64 },

    #[error("degenerate residual scale: first-stage residuals are all zero")]
    DegenerateScale,

    #[error("first-stage quantile regression failed at v = {v}: {source}")]
    FirstStageQuantile { v: f64, source: Box<CqivError> },

    #[error("first-stage distribution regression failed at threshold {index} (d = {threshold}): {source}")]
    FirstStageThreshold {
        index: usize,
        threshold: f64,
        source: Box<CqivError>,
    },

    #[error("no quantile-uncensored observations at u = {u}: no predicted uncensoring probability exceeds {cutoff}")]
    NoQuantileUncensored { u: f64, cutoff: f64 },

    #[error("selection collapse at u = {u}: {set} is empty")]
    SelectionCollapse { u: f64, set: &'static str },

    #[error("unsupported formula: {0}")]
    UnsupportedFormula(String),

    #[error("too few successful bootstrap draws: {available} (need at least {required})")]
    InsufficientDraws { available: usize, required: usize },

    #[error("bootstrap unreliable at u = {u}: {failures} of {reps} repetitions failed ({reasons:?})")]
    InferenceUnreliable {
        u: f64,
        failures: usize,
        reps: usize,
        reasons: Vec<String>,
    },

    #[error("Monte Carlo replication {index} failed: {source}")]
    Replication { index: usize, source: Box<CqivError> },

    #[error("data error: {0}")]
    Data(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, CqivError>;

impl From<std::io::Error> for CqivError {
    fn from(e: std::io::Error) -> Self {
        CqivError::Io(e.to_string())
    }
}
