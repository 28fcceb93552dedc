use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("logit {index} is not finite ({value})")]
    NonFiniteLogit { index: usize, value: f64 },

    #[error("categorical distribution over zero outcomes")]
    EmptyDistribution,

    #[error("trace was recorded in greedy mode and carries no gradient")]
    GreedyTrace,

    #[error("trace was recorded on a different tape")]
    ForeignTrace,

    #[error("token {token} is outside a vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("prediction requested before the dialog ended (round {round} of {rounds})")]
    DialogNotFinished { round: usize, rounds: usize },

    #[error("split fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),

    #[error("overheard feed covers {got} rounds, expected {expected}")]
    MalformedFeed { expected: usize, got: usize },

    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("empty input")]
    EmptyInput,

    #[error("evaluation log contains episodes sampled in training mode")]
    TrainingModeLog,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed dataset snapshot: {0}")]
    Snapshot(String),

    #[error("no completed runs for {0}")]
    NoCompletedRuns(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
