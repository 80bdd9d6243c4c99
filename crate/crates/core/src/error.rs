use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension { what: &'static str, expected: usize, actual: usize },

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no equilibrium control: least-squares residual {residual:e} exceeds tolerance")]
    NoEquilibriumControl { residual: f64 },

    #[error("Riccati solver failed: {0}")]
    Solver(String),

    #[error("non-finite loss at epoch {epoch} (lyapunov={lyapunov}, range={range}, shaping={shaping})")]
    NonFiniteLoss { epoch: usize, lyapunov: f64, range: f64, shaping: f64 },

    #[error("no valid region of attraction: {0}")]
    EmptyRoa(String),

    #[error("level {level} does not cross the field")]
    NoContour { level: f64 },

    #[error("contour at level {level} leaves the grid")]
    OpenContour { level: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
