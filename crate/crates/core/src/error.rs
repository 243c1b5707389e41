use alloc::string::String;

use crate::backend::BackendError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("backend: {0}")]
    Backend(#[from] BackendError),

    #[error("invalid trait model: {0}")]
    TraitModel(String),

    #[error("unknown trait system `{0}`")]
    UnknownSystem(String),

    #[error("unknown dimension `{dimension}` in system {system}")]
    UnknownDimension { system: String, dimension: String },

    #[error("invalid questionnaire item `{item}`: {reason}")]
    Item { item: String, reason: String },

    #[error("no parseable reflection lines")]
    NoParseableLines,

    #[error("first line has {words} words, budget is {budget}")]
    OverBudget { words: usize, budget: usize },

    #[error("asked for {wanted} initial reflections, got {got} after retries")]
    UnderGeneration { wanted: usize, got: usize },

    #[error("{what}: output unusable after retry")]
    Unparseable { what: &'static str },

    #[error("no scorer response contained a score in 0..=10")]
    AllScoresUnparseable,

    #[error("compactness pool too small: need {needed} members, have {have}")]
    PoolTooSmall { needed: usize, have: usize },

    #[error("empty candidate pool")]
    EmptyPool,

    #[error("evaluator mismatch: {0}")]
    EvaluatorMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),
}
