use thiserror::Error;

/// Errors produced anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} at position {position} is outside the vocabulary (size {vocab_size})")]
    TokenOutOfRange {
        id: usize,
        position: usize,
        vocab_size: usize,
    },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("hook at layer {layer}, position {position} is out of range (layers 0..={max_layer}, sequence length {seq_len})")]
    HookOutOfRange {
        layer: usize,
        position: usize,
        max_layer: usize,
        seq_len: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("non-finite activation value")]
    NonFinite,

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("task vectors come from different layers ({0} and {1})")]
    MixedLayers(usize, usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("prompt has no delimiter")]
    MissingDelimiter,

    #[error("task error: {0}")]
    Task(String),

    #[error("degenerate clustering input: {0}")]
    DegenerateGroups(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
