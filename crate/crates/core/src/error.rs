use thiserror::Error;

/// Errors raised by the wave-layer library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveError {
    #[error("invalid grid: n = {n}, need n >= 2")]
    InvalidGrid { n: usize },

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid medium: {0}")]
    InvalidMedium(String),

    #[error("invalid time step dt = {0}")]
    InvalidTimeStep(f64),

    /// A rollout produced a non-finite value. `step` is the index of the
    /// first state that contains it; `channel` is set when the rollout ran
    /// inside a multi-channel layer.
    #[error("rollout overflow at step {step}{}", channel.map(|c| format!(" (channel {c})")).unwrap_or_default())]
    Overflow { step: usize, channel: Option<usize> },

    #[error("WECS undefined: initial energy is zero")]
    UndefinedWecs,

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("the {0} integrator is forward-only and cannot be recorded for the adjoint pass")]
    UnsupportedIntegrator(&'static str),

    #[error("finite-difference step must be positive, got {0}")]
    InvalidEps(f64),

    #[error("tape was recorded with different parameters than the ones supplied")]
    StaleTape,

    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("input kind does not match the model: {0}")]
    InputKind(&'static str),

    #[error("ground-truth medium is unstable for dt = {dt} (bound {bound})")]
    UnstableGroundTruth { dt: f64, bound: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parameter file: {0}")]
    ParamFormat(String),
}

pub type Result<T, E = WaveError> = std::result::Result<T, E>;
