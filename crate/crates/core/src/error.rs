use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("genome must hold 40 integers, got {0}")]
    InvalidLength(usize),

    #[error("gene at position {position} has value {value}, allowed range is 0..={bound}")]
    OutOfBounds { position: usize, value: i64, bound: u8 },

    #[error("malformed genome text: {0}")]
    GenomeSyntax(String),

    #[error("invalid macro configuration: {0}")]
    InvalidMacro(String),

    #[error("spatial resolution {height}x{width} cannot be reduced further at layer {layer}")]
    DegenerateResolution { layer: usize, height: usize, width: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need at least {needed} samples, got {available}")]
    TooFewSamples { needed: usize, available: usize },

    #[error("validation set is empty")]
    EmptyValidation,

    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),

    #[error("corrupt record in {file} at byte offset {offset}")]
    CorruptRecord { file: PathBuf, offset: u64 },

    #[error("invalid normalization statistics: {0}")]
    InvalidStats(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("no ground truth for id {id}")]
    MissingGroundTruth { id: String },

    #[error("search interrupted after generation {completed}")]
    Interrupted { completed: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
