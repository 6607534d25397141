use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the particle engine, its models and its oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("observation record is empty")]
    EmptyRecord,

    #[error("observation {value} at t={t} is not admissible for model `{model}`")]
    InadmissibleObservation { t: usize, value: String, model: &'static str },

    #[error("non-finite log-potential {value} at index {index} (state {state})")]
    NonFinitePotential { index: usize, state: String, value: f64 },

    #[error("all particle weights are zero")]
    AllWeightsZero,

    #[error("every weight in block {block} is zero at step {step}")]
    ZeroBlockWeight { step: usize, block: usize },

    #[error("brute-force size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("particle count {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("block size {q} does not divide particle count {n}")]
    Indivisible { n: usize, q: usize },

    #[error("sequence length {0} is odd")]
    OddLength(usize),

    #[error("policy produced an invalid interaction: {0}")]
    PolicyFamily(String),

    #[error("lag {lag} exceeds retained history of {available} steps")]
    LagExceedsHistory { lag: usize, available: usize },

    #[error("trace was not produced by an adaptive resampling (Identity/Full) policy")]
    NotArpfTrace,

    #[error("insufficient retained history: {0}")]
    InsufficientHistory(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures caused by the numbers a run produced rather than by
    /// its configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinitePotential { .. } | Error::AllWeightsZero | Error::ZeroBlockWeight { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
