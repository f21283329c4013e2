use thiserror::Error;

/// Errors surfaced by training, evaluation, optimization, and file IO.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("token id {id} out of range (vocab size {vocab})")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence {index} exceeds context length: {len} > {max}")]
    SequenceTooLong { index: usize, len: usize, max: usize },

    #[error("sequence length {len} exceeds model context {ctx}")]
    ContextOverflow { len: usize, ctx: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("insufficient training samples: have {have}, need {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("unknown latent: layer {layer}, index {index}")]
    UnknownLatent { layer: usize, index: usize },

    #[error("unnormalizable latent: corpus max activation is {0}")]
    UnnormalizableLatent(f64),

    #[error("scoring position {pos} out of range for sequence of length {len}")]
    ScoringPositionOutOfRange { pos: usize, len: usize },

    #[error("objective is not decomposable per token; inpainting unavailable")]
    InpaintingUnavailable,

    #[error("no unfrozen position in optimization variable")]
    NoUnfrozenPosition,

    #[error("unknown token {0:?} not in vocabulary")]
    UnknownToken(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("training failed to meet contract: {0}")]
    TrainingFailed(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("malformed artifact {path}: {reason}")]
    MalformedArtifact { path: String, reason: String },

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
