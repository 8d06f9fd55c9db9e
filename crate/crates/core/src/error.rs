use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rank {requested} out of range (max {max})")]
    RankOutOfRange { requested: usize, max: usize },

    #[error("infinite SNR: noise covariance has zero operator norm")]
    InfiniteSnr,

    #[error("zero matrix: {0}")]
    ZeroMatrix(&'static str),

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("ambiguous sign: zero covariance between anchor {anchor} and {index}")]
    AmbiguousSign { anchor: usize, index: usize },

    #[error("pure variable group {group} has {size} member(s); at least two are required")]
    GroupTooSmall { group: usize, size: usize },

    #[error("no pure variables found at this delta ({delta})")]
    NoPureVariables { delta: f64 },

    #[error("linear program is {0}")]
    Lp(&'static str),

    #[error("every candidate failed to train")]
    AllCandidatesFailed,
}

pub type Result<T> = std::result::Result<T, Error>;
