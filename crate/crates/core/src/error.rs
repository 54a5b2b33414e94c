use thiserror::Error;

/// Errors raised by assembly, grid generation, value iteration and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A state update produced a non-finite value.
    #[error("numerical blowup at t = {t}")]
    Blowup { t: f64 },

    #[error("numerical blowup while generating the grid (initial state {initial}, control {control}, step {step})")]
    GridBlowup {
        initial: usize,
        control: usize,
        step: usize,
    },

    #[error("numerical blowup in closed-loop simulation at step {step} (t = {t})")]
    SimulationBlowup { step: usize, t: f64 },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("no value iteration converged over the shape-parameter scan")]
    NoConvergedShape,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for the blowup variants (used for exit-code mapping).
    pub fn is_blowup(&self) -> bool {
        matches!(
            self,
            Error::Blowup { .. } | Error::GridBlowup { .. } | Error::SimulationBlowup { .. }
        )
    }
}
