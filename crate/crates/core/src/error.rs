use thiserror::Error;

/// Errors produced by the solvers and the run orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("kernel set is inadmissible: {0}")]
    InadmissibleKernels(String),

    #[error("flux operator is ill-conditioned (condition estimate {condition:.3e} > {limit:.1e}); reduce the friction kernel amplitudes")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("singular matrix at cell {cell}")]
    SingularCell { cell: usize },

    #[error("singular linear system")]
    Singular,

    #[error("fixed-point iteration is not contractive (residual ratio {ratio:.3})")]
    NonContractive { ratio: f64 },

    #[error("friction tensor factorization failed: {0}")]
    Factorization(String),

    #[error("numerical abort at t = {time}: {reason}")]
    NumericalAbort { time: f64, reason: String },

    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
