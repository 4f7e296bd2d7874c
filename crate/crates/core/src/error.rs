use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in `{context}`: expected {expected}, got {actual}")]
    DimMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },
    #[error("item-count mismatch in space `{space}`: expected {expected} rows, got {actual}")]
    ItemCountMismatch {
        space: String,
        expected: usize,
        actual: usize,
    },
    #[error("zero-norm row {row} in space `{space}`")]
    ZeroNormRow { space: String, row: usize },
    #[error("non-finite value in row {row} of space `{space}`")]
    NonFiniteRow { space: String, row: usize },
    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),
    #[error("item index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("item {0} is not in the active candidate set")]
    InactiveItem(usize),
    #[error("a judgment pair must contain two distinct items, got ({0}, {0})")]
    DegeneratePair(usize),
    #[error("at least one judgment is required")]
    NoJudgments,
    #[error("confidence {0} is outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("temporal probability is not strictly positive on the active set (item {0})")]
    NonPositiveTemporal(usize),
    #[error("posterior underflowed to zero; accumulate the update in the log domain instead")]
    Underflow,
    #[error("need {needed} active candidates but only {available} are available; use fewer pairs")]
    TooFewCandidates { needed: usize, available: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    SequenceOverflow { len: usize, max: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss {loss}); the learning rate is likely too high")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("no trained predictor available for space {0}")]
    MissingPredictor(usize),
    #[error("session has reached its step limit of {0}")]
    StepLimit(usize),
    #[error("no pending display for this session")]
    NoPendingDisplay,
    #[error("query vectors are required for this operation")]
    QueryVectorsRequired,
}
