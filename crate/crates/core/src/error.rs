use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("brute-force limit exceeded: graph has {n} nodes, limit is {limit}")]
    BruteForceLimit { n: usize, limit: usize },
    #[error("prime index {index} exceeds configured bound {bound}")]
    PrimeBoundExceeded { index: num_bigint::BigUint, bound: u64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
