use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("conformity error: face {face} is referenced by {count} cells")]
    Conformity { face: usize, count: usize },

    #[error("degenerate geometry in {entity}: {msg}")]
    Degenerate { entity: String, msg: String },

    #[error("orientation error in cell {cell}: {msg}")]
    Orientation { cell: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("cell {cell}: matrix is numerically singular (condition estimate {cond:.3e})")]
    Singular { cell: usize, cond: f64 },

    #[error("matrix is not symmetric (relative defect {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("Picard iteration did not converge in {iterations} iterations (last relative change {change:.3e})")]
    PicardNoConvergence { iterations: usize, change: f64 },

    #[error("direct solve of {size} unknowns exceeds the limit of {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("level {level} (nx = {nx}): {source}")]
    Level {
        level: usize,
        nx: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
