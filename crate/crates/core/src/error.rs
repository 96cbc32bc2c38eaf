use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument {arg} = {value} is outside the domain of {op}")]
    Domain {
        op: &'static str,
        arg: &'static str,
        value: f64,
    },

    #[error("real-time user with zero rate cannot be scheduled")]
    ZeroRate,

    #[error("set of {size} real-time users cannot fit in the slot even at maximum power")]
    InfeasibleSet { size: usize },

    #[error("exhaustive search refuses {n} real-time users (limit {limit})")]
    TooManyUsers { n: usize, limit: usize },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("non-finite value in {what} at slot {slot}")]
    Numeric { slot: u64, what: &'static str },

    #[error("joint fading state space has {states} states (limit {limit})")]
    StateSpace { states: usize, limit: usize },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
