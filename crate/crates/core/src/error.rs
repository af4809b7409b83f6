use thiserror::Error;

pub type Result<T> = std::result::Result<T, SweepError>;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid convex set: {0}")]
    InvalidSet(String),

    #[error("Dykstra projection did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("set is unbounded in the requested direction")]
    Unbounded,

    #[error("point lies outside the set (distance {distance:.3e})")]
    NotInSet { distance: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("infeasible initial condition: {0}")]
    Infeasible(String),

    #[error("at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SweepError>,
    },

    #[error("invariant violated at step {step}: {detail}")]
    InvariantViolation { step: usize, detail: String },

    #[error("not in monotone regime: alpha = {0}")]
    NotMonotone(f64),

    #[error("step {h:e} too coarse for eps = {eps:e}: need h <= {limit:e}")]
    StepTooCoarse { h: f64, eps: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl SweepError {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ (SweepError::Step { .. } | SweepError::InvariantViolation { .. }) => e,
            e => SweepError::Step {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, looking through step annotations.
    pub fn root(&self) -> &SweepError {
        match self {
            SweepError::Step { source, .. } => source.root(),
            e => e,
        }
    }
}
