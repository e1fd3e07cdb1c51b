use thiserror::Error;

#[derive(Debug, Error)]
pub enum TswError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("blow-up at step {step}: {reason}")]
    BlowUp { step: usize, reason: String },

    #[error("multigrid residual increased during cycle {cycle}: {before:e} -> {after:e} (per-level residuals {per_level:?})")]
    MultigridDivergence {
        cycle: usize,
        before: f64,
        after: f64,
        per_level: Vec<f64>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, TswError>;

impl TswError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        TswError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
