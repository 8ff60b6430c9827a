use thiserror::Error;

use crate::qp::QpSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("QP solver did not converge after {} sweeps (KKT residual {:.3e})", .best.iterations, .best.kkt_residual)]
    NotConverged { best: Box<QpSolution> },

    #[error("{dim}x{dim} matrix is not numerically positive definite; increase the ridge")]
    NotPositiveDefinite { dim: usize },

    #[error("degenerate hyperplane: ||w{plane}|| = {norm:.3e}")]
    DegeneratePlane { plane: u8, norm: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the error class: 2 parse, 3 numeric, 4 config.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::InvalidDataset(_) | Error::ModelFormat(_) => 2,
            Error::NotConverged { .. } | Error::NotPositiveDefinite { .. } | Error::DegeneratePlane { .. } | Error::Split(_) | Error::Dimension { .. } => 3,
            Error::InvalidParameter(_) | Error::Config(_) | Error::Io(_) => 4,
        }
    }
}
