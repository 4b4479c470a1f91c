use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("{what} not finite")]
    NotFinite { what: &'static str },

    #[error("weight not symmetric: {0}")]
    NotSymmetric(String),

    #[error("R not uniformly positive: min eigenvalue {min_eig} <= delta {delta}")]
    NotUniformlyPositive { min_eig: f64, delta: f64 },

    #[error("weight not positive semidefinite: {name} has min eigenvalue {min_eig}")]
    NotPsd { name: &'static str, min_eig: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix encountered: {0}")]
    Singular(String),

    #[error("representation singular at t={t}")]
    RepresentationSingular { t: f64 },

    #[error("Riccati blow-up at t={t}")]
    RiccatiBlowUp { t: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time {t} outside [0, {t1}]")]
    TimeOutOfRange { t: f64, t1: f64 },

    #[error("system not solvable on [0,T]: min det {min_det} <= threshold {threshold}")]
    NotSolvable { min_det: f64, threshold: f64 },

    #[error("simulation failed for N={n_agents}, seed={seed}: {message}")]
    RunFailed {
        n_agents: usize,
        seed: u64,
        message: String,
    },

    #[error("non-positive data: {0}")]
    NonPositiveData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
