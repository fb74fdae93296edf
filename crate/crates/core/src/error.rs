use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Variants map onto the CLI exit codes: configuration and contract problems
/// exit with 2, numerical failures with 3 (see [`Error::is_numerical`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    Grid(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("covariance decomposition failed on grid {grid}: {reason}")]
    Decomposition { grid: String, reason: String },

    #[error("grid too coarse for delta = {delta}: fast step {step} exceeds delta/4; use at least {required_substeps} fast sub-steps per slow step")]
    Stiffness {
        delta: f64,
        step: f64,
        required_substeps: usize,
    },

    #[error("divergence at step {step} (t = {time}): non-finite state")]
    Divergence { step: usize, time: f64 },

    #[error("integrability error: {0}")]
    Integrability(String),

    #[error("singular diffusion at step {step}: condition number {condition:e} exceeds {limit:e}")]
    Singularity {
        step: usize,
        condition: f64,
        limit: f64,
    },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("assumption probe failed: {constant} = {value} (required {requirement})")]
    Assumption {
        constant: String,
        value: f64,
        requirement: String,
    },

    #[error("value {value:?} outside tabulated range on axis {axis}: [{lo}, {hi}]")]
    Range {
        axis: usize,
        value: Vec<f64>,
        lo: f64,
        hi: f64,
    },

    #[error("refused: {0}")]
    Refused(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Decomposition { .. }
                | Error::Divergence { .. }
                | Error::Integrability(_)
                | Error::Singularity { .. }
                | Error::Stiffness { .. }
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
