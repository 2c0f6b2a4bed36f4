use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid catalog: {0}")]
    Catalog(String),

    #[error("partition key {0} is negative")]
    NegativeKey(i64),

    #[error("query {query}: expected {expected} parameters, got {got}")]
    Arity { query: String, expected: usize, got: usize },

    #[error("unknown procedure `{0}`")]
    UnknownProcedure(String),

    #[error("procedure `{procedure}` has no query `{query}`")]
    UnknownQuery { procedure: String, query: String },

    #[error("line {line}: {message}")]
    TraceLine { line: usize, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("model for `{expected}` cannot absorb a `{found}` record")]
    WrongProcedure { expected: String, found: String },

    #[error("model `{0}` contains a cycle")]
    Cycle(String),

    #[error("model `{0}` is frozen")]
    Frozen(String),

    #[error("model `{0}` has not been processed")]
    NotFrozen(String),

    #[error("model `{0}` has no transitions out of begin")]
    EmptyModel(String),

    #[error("path estimate exceeded {0} states")]
    PathTooLong(usize),

    #[error("transaction already reached a terminal state")]
    SessionClosed,

    #[error("empty workload")]
    EmptyWorkload,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
