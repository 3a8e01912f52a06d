use alloc::string::String;

/// Errors raised by the decision engine, simulator and oracles.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("score {score} outside table support [0, {max_score}]")]
    ScoreOutOfRange { score: u32, max_score: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data for period {period} is not mature as of period {as_of} (maturity horizon {horizon})")]
    Stale { period: u32, as_of: u32, horizon: u32 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("chargeback rate undefined for period {period}: no finally approved transactions")]
    UndefinedRate { period: u32 },

    #[error("not enough history: need {needed} mature periods, have {available}")]
    NotEnoughHistory { needed: usize, available: usize },

    #[error("regressor used before fitting")]
    Unfitted,

    #[error("batch of {size} transactions exceeds enumeration limit {limit}")]
    BatchTooLarge { size: usize, limit: usize },

    #[error("invalid model: {0}")]
    Model(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
