use thiserror::Error;

/// Errors surfaced by the laboratory core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("paired datasets have different sizes: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("infinite SNR: sigma_p = 0")]
    InfiniteSnr,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("eigensolver did not converge: best residual {residual:.3e} after {iters} iterations")]
    NoConvergence { residual: f64, iters: usize },

    #[error("ill-conditioned noise basis: condition number {0:.3e}")]
    IllConditioned(f64),

    #[error("filter count {0} is odd and cannot be split into two banks")]
    OddFilterCount(usize),

    #[error(
        "coefficient modes disagree at step {step} (bank {bank}, filter {filter}, sample {sample}): \
         recurrence {recurrence:.9e} vs direct {direct:.9e}"
    )]
    CoefficientMismatch {
        step: usize,
        bank: i8,
        filter: usize,
        sample: usize,
        recurrence: f64,
        direct: f64,
    },

    #[error("filter trajectory overflow at step {0}")]
    Overflow(usize),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
