use thiserror::Error;

/// Errors produced by counters, oracles and the algorithm registry.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("counter parameters differ: {0}")]
    ParamMismatch(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("malformed state record: {0}")]
    Parse(String),

    #[error("unsupported state record version {0}")]
    Version(u64),

    #[error("bit budget {budget} is infeasible for n_max {n_max}: {detail}")]
    InfeasibleBudget {
        budget: u32,
        n_max: u64,
        detail: String,
    },

    #[error("unknown algorithm {0:?}")]
    UnknownAlgo(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
