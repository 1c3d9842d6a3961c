use thiserror::Error;

/// Errors surfaced by the solver stack. `Config` and `Format` indicate bad
/// input; the remaining variants indicate numerical failure at runtime.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("file format error: {0}")]
    Format(String),
}

impl CoreError {
    /// True for errors caused by bad configuration or malformed input files,
    /// as opposed to numerical breakdown during a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            CoreError::Config(_) | CoreError::Shape(_) | CoreError::Format(_) | CoreError::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
