use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no observations")]
    NoObservations,
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("grid does not cover day {day}")]
    GridMismatch { day: i64 },
    #[error("curve `{0}` is already smoothed")]
    AlreadySmoothed(String),
    #[error("streams belong to different subjects (`{expected}` vs `{found}`)")]
    MixedSubjects { expected: String, found: String },
    #[error("variable `{0}` has a kind that disagrees with the vocabulary")]
    KindMismatch(String),
    #[error("empty cohort")]
    EmptyCohort,
    #[error("component count exceeds rank ({requested} > {rank})")]
    RankDeficient { requested: usize, rank: usize },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("day {day} outside curve range")]
    DayOutOfRange { day: i64 },
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("non-finite attention logits")]
    NonFiniteLogits,
    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),
    #[error("AUC undefined: both classes must be present")]
    SingleClass,
    #[error("need at least {needed} non-zero paired differences, found {found}")]
    TooFewPairs { needed: usize, found: usize },
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
    #[error("empty split: {0}")]
    EmptySplit(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}
