use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid bandit instance: {}", .0.join("; "))]
    InvalidInstance(Vec<String>),

    #[error("arm index {index} out of range for {arms} arms")]
    ArmIndex { index: usize, arms: usize },

    #[error("fluid solver did not converge after {iterations} iterations (bracket [{lo:e}, {hi:e}], g(lo)={g_lo:e}, g(hi)={g_hi:e})")]
    Solver {
        iterations: usize,
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("singular perturbation system: denominator {denominator:e} below threshold {threshold:e}")]
    Singular { denominator: f64, threshold: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
