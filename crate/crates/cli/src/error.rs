use std::path::Path;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] netren::Error),

    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error("certificate infeasible: max eigenvalue {0:e}")]
    Infeasible(f64),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use netren::Error as E;
        match self {
            Self::Toml(_) | Self::Usage(_) => EXIT_INVALID,
            Self::Core(e) => match e {
                E::Diverged { .. } | E::TrainingDiverged { .. } => EXIT_DIVERGED,
                E::InvalidInterconnection(_)
                | E::InputTooSmall { .. }
                | E::InvalidTopology(_)
                | E::Config(_)
                | E::DimensionMismatch { .. }
                | E::InvalidDimensions(_)
                | E::NonPositiveGain(_)
                | E::Json(_) => EXIT_INVALID,
                _ => EXIT_FAILURE,
            },
            Self::Io { .. } | Self::Infeasible(_) => EXIT_FAILURE,
        }
    }

    /// Machine-readable form printed on stdout.
    pub fn to_json(&self) -> serde_json::Value {
        use netren::Error as E;
        match self {
            Self::Core(E::InvalidInterconnection(v)) => serde_json::json!({
                "error": "invalid_interconnection",
                "violations": v,
            }),
            Self::Core(E::TrainingDiverged { epoch, sample, t, norm }) => serde_json::json!({
                "error": "diverged",
                "epoch": epoch,
                "sample": sample,
                "t": t,
                "norm": norm,
            }),
            Self::Core(E::Diverged { t, norm }) => serde_json::json!({
                "error": "diverged",
                "t": t,
                "norm": norm,
            }),
            other => serde_json::json!({
                "error": match other.exit_code() {
                    EXIT_INVALID => "invalid_config",
                    _ => "failure",
                },
                "message": other.to_string(),
            }),
        }
    }
}
