use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("degenerate attitude: {0}")]
    DegenerateAttitude(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },

    #[error("integration fault at t = {t:.4} s: non-finite state derivative")]
    IntegrationFault { t: f64 },

    #[error("infeasible horizon schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
