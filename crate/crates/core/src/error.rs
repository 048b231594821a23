use crate::em::EmError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Storage(#[from] EmError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("structure clogged: no level below level {level} can absorb the merge")]
    Clog { level: usize },
    #[error("time index {got} does not follow {prev}")]
    TimeOrder { prev: u64, got: u64 },
    #[error("time index {got} exceeds declared stream length {n}")]
    PastEnd { got: u64, n: u64 },
    #[error("infeasible stream spec: {0}")]
    Workload(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("internal invariant broken: {0}")]
    Internal(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
