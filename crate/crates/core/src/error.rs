use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input outside the domain of a pricing or physics function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent configuration / scenario data.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's contract (wrong counts, bad shapes, misuse).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A tensor shape disagreement inside the neural kernel.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Battery bookkeeping would leave the allowed state-of-charge window.
    #[error("state of charge {soc:.6} outside [{min}, {max}]")]
    SocBounds { soc: f64, min: f64, max: f64 },

    /// The trading protocol could not complete a stage.
    #[error("protocol error at {stage}: {detail}")]
    Protocol { stage: &'static str, detail: String },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Load(#[from] crate::experiment::LoadError),

    /// A run directory lacks files an operation needs.
    #[error("{dir}: missing {}", missing.join(", "))]
    MissingArtifacts { dir: PathBuf, missing: Vec<String> },
}

impl Error {
    /// Whether the failure comes from configuration rather than from running.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Load(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
