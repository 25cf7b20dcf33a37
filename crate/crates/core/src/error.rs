use thiserror::Error;

/// Errors produced by the two-sample testing engine.
#[derive(Debug, Error)]
pub enum BktError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid kernel parameter: theta = {0} (must be finite and > 0)")]
    InvalidTheta(f64),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("covariance is not positive definite: {0}")]
    SingularCovariance(String),

    #[error("degenerate Jacobian geometry{}: smallest eigenvalue of J^T J is {lambda_min:e}", .pair.map(|i| format!(" at pair {i}")).unwrap_or_default())]
    DegenerateJacobian { pair: Option<usize>, lambda_min: f64 },

    #[error("oracle size guard: n*s = {0} exceeds 4096")]
    OracleTooLarge(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BktError>;

/// Process exit codes used by the `bkt` binary.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

impl BktError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BktError::Config(_) => exit::USAGE,
            BktError::DimensionMismatch { .. }
            | BktError::InvalidTheta(_)
            | BktError::DegenerateData(_)
            | BktError::Input(_)
            | BktError::Parse { .. }
            | BktError::Io(_)
            | BktError::Json(_) => exit::DATA,
            BktError::SingularCovariance(_)
            | BktError::DegenerateJacobian { .. }
            | BktError::OracleTooLarge(_)
            | BktError::Numerical(_) => exit::NUMERICAL,
        }
    }
}
