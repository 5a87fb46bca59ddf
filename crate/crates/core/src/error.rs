use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sample is empty")]
    EmptySample,

    #[error("non-finite value {value} at position {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("interval [{first}, {last}] is out of range for {len} points")]
    IndexOutOfRange { first: usize, last: usize, len: usize },

    #[error("cluster count {k} is out of range for {n} points")]
    InvalidClusterCount { k: usize, n: usize },

    #[error("separation must be finite and nonnegative, got {0}")]
    InvalidSeparation(f64),

    #[error(
        "{n} points exceeds the constrained solver limit of {limit} \
         (worst case O(N^3 K) time, O(N^2 K) memory); force the solve to override"
    )]
    ProblemTooLarge { n: usize, limit: usize },

    #[error("no partition satisfies the separation constraint")]
    Infeasible,

    #[error("diagonal entry {index} must be positive and finite, got {value}")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("gap {index}: lower bound {lo} exceeds upper bound {hi}")]
    InvertedBand { index: usize, lo: f64, hi: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("component {0} has vanishing responsibility mass")]
    DegenerateComponent(usize),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
