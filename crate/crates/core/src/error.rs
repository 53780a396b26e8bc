use thiserror::Error;

use crate::network::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("gain must be positive and finite, got {0}")]
    NonPositiveGain(f64),

    #[error("input sequence has zero norm, gain ratio is undefined")]
    ZeroInputNorm,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("interconnection violates {} structural condition(s)", .0.len())]
    InvalidInterconnection(Vec<Violation>),

    #[error("agent {agent}: controller input dimension {have} cannot host the default routing, need at least {need}")]
    InputTooSmall { agent: usize, have: usize, need: usize },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("rollout diverged at t = {t} (|x|_inf = {norm:e})")]
    Diverged { t: usize, norm: f64 },

    #[error("training diverged at epoch {epoch}, sample {sample}, t = {t} (|x|_inf = {norm:e})")]
    TrainingDiverged {
        epoch: usize,
        sample: usize,
        t: usize,
        norm: f64,
    },

    #[error("certification failed at epoch {epoch}: max eigenvalue {max_eigenvalue:e}")]
    CertificationFailed { epoch: usize, max_eigenvalue: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
