use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("backend mismatch: {0}")]
    BackendMismatch(String),
    #[error("time step {dt} violates the stability bound {bound}")]
    Cfl { dt: f64, bound: f64 },
    #[error("mollification width {sigma} is under-resolved (needs at least {min})")]
    UnderResolved { sigma: f64, min: f64 },
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("tail bound violated: {0}")]
    TailBound(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing track: {0}")]
    MissingTrack(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
