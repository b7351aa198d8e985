use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("head dimension must be even and at least 2, got {0}")]
    HeadDim(usize),
    #[error("rotary base must be finite and greater than 1, got {0}")]
    Base(f64),
    #[error("invalid frequency scaling: {0}")]
    Scaling(String),
    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("relative distance must be non-negative, got {0}")]
    NegativeDistance(i64),
    #[error("invalid position map parameter: {0}")]
    MapParameter(String),
    #[error("invalid dimension plan: {0}")]
    Plan(String),
    #[error("invalid attention problem: {0}")]
    Problem(String),
    #[error("sequence length {len} exceeds exact-engine cap {cap}")]
    SequenceTooLong { len: usize, cap: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("top-k {k} out of range 0..={max}")]
    TopK { k: usize, max: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid sweep configuration: {0}")]
    Sweep(String),
    #[error("evaluator failed at group {group}, detecting length {length}: {message}")]
    Evaluator {
        group: usize,
        length: u32,
        message: String,
    },
    #[error("score for group {group}, detecting length {length} is NaN")]
    NanScore { group: usize, length: u32 },
    #[error("context length {len} cannot hold {needed} tokens")]
    ContextTooSmall { len: usize, needed: usize },
    #[error("invalid fixture specification: {0}")]
    Fixture(String),
}
