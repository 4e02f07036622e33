use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("steady state: smallness violated ({0})")]
    SmallnessViolated(String),

    #[error("decoupled system: gamma1 = 4*phibar^3 - 4*phibar vanishes for phibar = {phibar}")]
    Decoupled { phibar: f64 },

    #[error("singular matrix: zero pivot at row {row}")]
    Singular { row: usize },

    #[error("instability: non-finite state at step {step}")]
    Instability { step: usize },

    #[error("conjugate gradient stagnated after {iterations} iterations (relative residual {residual:e})")]
    CgStagnation { iterations: usize, residual: f64 },

    #[error("unobserved sample: the adjoint never reaches the control region")]
    Unobserved,

    #[error("weight underflow: observation integral vanished while the left side did not (try a smaller s)")]
    WeightUnderflow,

    #[error("unbounded weighted norm: {0}")]
    UnboundedWeightedNorm(String),

    #[error("outside contraction regime: contraction ratio >= 1 for {consecutive} consecutive iterations")]
    OutsideContraction { consecutive: usize },

    #[error("fixed point did not converge in {iterations} iterations (last distance {distance:e})")]
    NonConvergence { iterations: usize, distance: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
