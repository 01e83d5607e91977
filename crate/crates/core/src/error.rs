use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite value in RK4 stage {stage}")]
    Rk4Stage { stage: usize },

    #[error("simulation diverged at step {step} (|value| > {limit:e})")]
    Diverged { step: usize, limit: f64 },

    #[error("rollout diverged for window starting at {start}")]
    WindowDiverged { start: usize },

    #[error("training diverged in phase {phase} at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { phase: u8, epoch: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
