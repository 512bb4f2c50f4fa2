use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eig:.3e}, tolerance {tol:.3e})")]
    NotPsd { min_eig: f64, tol: f64 },

    #[error("kernel matrix is singular: residual {residual:.3e} after jitter escalation up to {max_jitter:.3e}")]
    SingularKernel { residual: f64, max_jitter: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("k-means degenerated: {0}")]
    DegenerateClusters(String),

    #[error("task {task} has no permitted gates after resampling")]
    EmptyMask { task: usize },

    #[error("bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("IDX file truncated: expected {expected} payload bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("not enough samples of class {class:+}: need {needed}, have {available}")]
    InsufficientClassSamples {
        class: i8,
        needed: usize,
        available: usize,
    },

    #[error("integer overflow computing {0}")]
    Overflow(String),

    #[error("memory budget exceeded: {requested} entries requested, limit {limit}")]
    BudgetExceeded { requested: usize, limit: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("argument out of domain: {0}")]
    DomainError(String),

    #[error("normalized kernel undefined: non-positive diagonal entry")]
    ZeroDiagonal,

    #[error("Langevin dynamics diverged at step {step} (energy {energy:.3e})")]
    Diverged { step: usize, energy: f64 },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
