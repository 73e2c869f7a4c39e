use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ambiguous decomposition: {0}")]
    Ambiguous(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("inverted element (det = {0:e})")]
    Inverted(f64),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("refinement required: {0}")]
    Refinement(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("setup error: {0}")]
    Setup(String),
    #[error("infeasible start: {0}")]
    Infeasible(String),
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether this error stems from user configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::InvalidInput(_) | Error::Parse { .. } | Error::Io(_))
    }
}
