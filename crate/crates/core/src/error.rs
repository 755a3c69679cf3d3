use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("non-finite value at step {step} (index {index})")]
    NonFinite { step: usize, index: usize },

    #[error("mass leak at t = {time}: |mass - 1| = {drift:e} exceeds {tol:e}")]
    MassLeak { time: f64, drift: f64, tol: f64 },

    #[error("negative density at t = {time}: clipped mass {clipped:e} exceeds {tol:e}")]
    NegativeDensity { time: f64, clipped: f64, tol: f64 },

    #[error("CFL violation at step {step}: courant number {courant} > {limit}")]
    Cfl { step: usize, courant: f64, limit: f64 },

    #[error("instability at step {step}: L2 norm {norm:e} exceeds 10x initial {initial:e}")]
    Instability { step: usize, norm: f64, initial: f64 },

    #[error("trajectory left the drift grid at step {step}: y = {position}")]
    OutOfGrid { step: usize, position: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::GridTooCoarse(_) => "grid-too-coarse",
            Error::NonFinite { .. } => "non-finite",
            Error::MassLeak { .. } => "mass-leak",
            Error::NegativeDensity { .. } => "negative-density",
            Error::Cfl { .. } => "cfl",
            Error::Instability { .. } => "instability",
            Error::OutOfGrid { .. } => "out-of-grid",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
