use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the pipeline.
///
/// Variants are grouped by origin: tensor/layer contract violations,
/// audio and dataset I/O, checkpoint decoding, and evaluation protocol.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("batch normalization needs at least 2 elements per channel in train mode, got {0}")]
    DegenerateBatch(usize),

    #[error("label row {0} is not a valid one-hot vector")]
    InvalidLabel(usize),

    #[error("backward called without a recorded forward pass ({0})")]
    StaleGraph(&'static str),

    #[error("input {h}x{w} is smaller than the {window}x{window} pooling window")]
    InputTooSmall { h: usize, w: usize, window: usize },

    #[error("clip too short: {needed} samples needed, clip has {got}")]
    ClipTooShort { needed: usize, got: usize },

    #[error("unknown shape label id {0}")]
    UnknownLabel(usize),

    #[error("malformed WAV header: {0}")]
    MalformedWav(String),

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedWav(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest at line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },

    #[error("checkpoint format version {got}, expected {expected}")]
    VersionMismatch { got: u32, expected: u32 },

    #[error("checkpoint payload checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("checkpoint tensor `{name}`: shape {got:?} does not match expected {expected:?}")]
    TensorShapeMismatch {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("class {class} has only {rows} rows; at least 2 are required to split")]
    ClassTooSmall { class: usize, rows: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("label set violation: {0}")]
    LabelSetViolation(String),

    #[error("training diverged: loss became non-finite at epoch {epoch}, batch {batch}; try lowering the learning rate")]
    TrainDiverged { epoch: usize, batch: usize },

    #[error("training set contains a single class; at least 2 are required")]
    SingleClassTrainingSet,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
