use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("transition row (turn {turn}, state {state}, action {action}) sums to {sum}, not 1")]
    TransitionNotNormalized {
        turn: usize,
        state: usize,
        action: usize,
        sum: f64,
    },

    #[error("negative probability {prob} in {location}")]
    NegativeProbability { location: String, prob: f64 },

    #[error("initial distribution sums to {0}, not 1")]
    InitialNotNormalized(f64),

    #[error("state id {id} appears at turn {first} and turn {second}")]
    OverlappingStates { id: u64, first: usize, second: usize },

    #[error("terminal reward {value} at (state {state}, action {action}) lies outside [{min}, {max}]")]
    RewardOutOfRange {
        state: usize,
        action: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("unknown state index {0}")]
    UnknownState(usize),

    #[error("unknown action {action} (action count {count})")]
    UnknownAction { action: usize, count: usize },

    #[error("policy and MDP disagree: {0}")]
    DomainMismatch(String),

    #[error("trajectory enumeration needs {needed} entries, cap is {cap}")]
    EnumerationCap { needed: u128, cap: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("scheme {scheme} {problem}")]
    SchemeBufferMismatch { scheme: String, problem: &'static str },

    #[error("offline buffer has no prefixes at turn {0}")]
    EmptyStratum(usize),

    #[error("adversary output rejected at round {round}: {reason}")]
    InvalidAdversary { round: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
