use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Model, scenario, or graph configuration that cannot be simulated.
    #[error("configuration error: {0}")]
    Config(String),

    /// Newton iteration failed to reach the mismatch tolerance.
    #[error("network solver diverged after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    Divergence { iterations: usize, mismatch: f64 },

    #[error("parse error in {what}: {message}")]
    Parse { what: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
