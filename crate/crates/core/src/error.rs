//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the design and identification pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A physical or algorithmic parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Operand shapes do not match.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The regressor Gram matrix ΦΦᵀ is (numerically) singular.
    #[error("singular regressor: smallest singular value of Φ is {smallest_singular_value:e}")]
    SingularRegressor { smallest_singular_value: f64 },

    /// The data contradict the configured disturbance energy bound (G < 0).
    #[error("prior disturbance bound falsified by data: G = {g:e} < 0")]
    FalsifiedPrior { g: f64 },

    /// A frequency is not an integer multiple of 1/T.
    #[error("frequency {omega} is not on the grid of horizon {horizon}")]
    OffGridFrequency { omega: f64, horizon: usize },

    /// A linear solve hit a singular matrix (e.g. e^{jω}I − A for non-Schur A).
    #[error("numerical singularity: {0}")]
    NumericalSingularity(String),

    /// Too many prior samples are not Schur stable (the prior must contain stable systems).
    #[error("prior too large: {rejected} of {total} sampled models are not Schur stable")]
    PriorTooLarge { rejected: usize, total: usize },

    /// A matrix expected to be Hermitian/symmetric is not.
    #[error("matrix is not Hermitian (asymmetry {asymmetry:e})")]
    NonHermitian { asymmetry: f64 },

    /// The exploration SDP has no feasible point.
    #[error("infeasible: {lmi} cannot be satisfied ({detail})")]
    Infeasible { lmi: String, detail: String },

    /// The SDP is unbounded below, which indicates a construction bug.
    #[error("unbounded SDP: {0}")]
    Unbounded(String),

    /// The conic solver failed numerically or hit its iteration limit.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// An unknown study name was requested.
    #[error(
        "unknown study '{0}' (expected one of energy-vs-gammaw, posterior-vs-D0, targeted-vs-naive, sensitivity-theta0, energy-vs-Ddes)"
    )]
    UnknownStudy(String),

    /// Configuration could not be parsed or validated.
    #[error("configuration error: {0}")]
    Config(String),

    /// A pipeline stage failed; wraps the underlying error with the stage name.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap this error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// The innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
