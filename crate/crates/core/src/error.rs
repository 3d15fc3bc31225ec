use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported: {what} (maximum supported is {max})")]
    Capability { what: String, max: usize },

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("time step collapsed to {dt:e} at t = {t}")]
    Stiffness { t: f64, dt: f64 },

    #[error("diffeomorphism lost monotonicity: {0}")]
    DiffeoBreakdown(String),

    #[error("eigen-solver failed: {0}")]
    Numerical(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no admissible gauge: {0}")]
    NoAdmissibleGauge(String),

    #[error("diagnostics error: {0}")]
    Diagnostics(String),

    #[error("generator exhausted after {0} consecutive rejections")]
    GeneratorExhausted(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error at {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
