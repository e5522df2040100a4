use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("token id {id} out of range for a vocabulary of {vocab}")]
    InvalidToken { id: usize, vocab: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("sequence length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },

    #[error("timestep {t} outside the schedule interval [{t_min}, 1]")]
    Schedule { t: f64, t_min: f64 },

    #[error("timestep {t} too close to 1 for this conversion")]
    Boundary { t: f64 },

    #[error("probability vector has no usable mass")]
    Degenerate,

    #[error("invalid probability vector: {0}")]
    InvalidProb(String),

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("prefix length {len} must be smaller than the sequence length {n}")]
    Position { len: usize, n: usize },

    #[error("enumerating {size} sequences exceeds the cap of {cap}")]
    TooLarge { size: u128, cap: u128 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("parameter shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{phase} diverged at iteration {iteration}: {detail}")]
    Divergence {
        phase: String,
        iteration: u64,
        detail: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("refinement steps k={k} outside 1..={max}")]
    StepsOutOfRange { k: usize, max: usize },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }
}
