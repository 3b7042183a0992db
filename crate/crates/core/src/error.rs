use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite weight at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("illegal DSP mode: {0}")]
    IllegalMode(&'static str),

    #[error("address {addr:#x} outside modeled capacity of {capacity} bytes")]
    AddressOutOfRange { addr: u64, capacity: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown {kind} preset `{name}` (known: {known})")]
    UnknownPreset {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("context length {requested} exceeds limit {limit}")]
    ContextOverflow { requested: usize, limit: usize },

    #[error("URAM budget exceeded: {0}")]
    UramBudget(String),

    #[error("cannot partition {dim} = {value} across {cores} cores")]
    Partition {
        dim: &'static str,
        value: usize,
        cores: usize,
    },

    #[error("capacity overflow on {0}")]
    Capacity(String),

    #[error("weight file: {0}")]
    WeightFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
