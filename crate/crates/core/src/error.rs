use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a map (e.g. a superluminal boost).
    #[error("{what}: value {value} is outside the admissible domain")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The requested time step breaks the monotonicity bound of the explicit scheme.
    #[error("time step {dt:e} exceeds the stability bound {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("ensemble contains no usable replicas")]
    EmptyEnsemble,

    #[error("momentum {p} maps outside the solution grid")]
    Extrapolation { p: f64 },

    #[error("lens mask does not match the solver grid")]
    MaskMismatch,

    #[error("time {t} is below the resolvable scale {min}")]
    Unresolvable { t: f64, min: f64 },

    #[error("trajectory diverged at s = {at}")]
    Diverged { at: f64 },

    #[error("target is not reachable from the initial point")]
    Unreachable,

    /// Shooting failed from every start; the transcription estimate is still reported.
    #[error("shooting did not converge (best residual {residual:e}); transcription cost {transcription_cost}")]
    ShootingFailed {
        residual: f64,
        transcription_cost: f64,
    },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
