use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training did not converge after {steps} steps: {violations}")]
    NotConverged { steps: usize, violations: String },
    #[error("verification failed: {count} violating grid points (max V̇ = {max_vdot})")]
    VerifyFailed { count: usize, max_vdot: f64 },
    #[error(transparent)]
    Core(#[from] clfkit::Error),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) | Self::Checkpoint(_) => 2,
            Self::NotConverged { .. } => 3,
            Self::VerifyFailed { .. } => 4,
            Self::Core(_) | Self::Io { .. } => 1,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), message: err.to_string() }
    }
}
