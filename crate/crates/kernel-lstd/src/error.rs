use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument outside its domain: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("linear system is singular or ill-posed (relative residual {residual:e})")]
    SingularSystem { residual: f64 },
    #[error("critical inequality has no solution: {0}")]
    NoSolution(String),
    #[error("function has {energy:e} energy outside the kernel span")]
    SpanError { energy: f64 },
    #[error("level {level} too small, need at least {needed}")]
    LevelTooSmall { level: u32, needed: u32 },
    #[error("parameter violation: {0}")]
    ParameterViolation(String),
    #[error("packing stopped at {achieved} of {target} vectors")]
    PackingFailure { achieved: usize, target: usize },
    #[error("degenerate regression: {0}")]
    Degenerate(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
