use thiserror::Error;

/// Errors raised by the extraction engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("input of {len} samples is shorter than one analysis frame ({frame} samples)")]
    TooShort { len: usize, frame: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("node {0} does not belong to this graph")]
    Disconnected(usize),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("gradient supplied for frozen tensor `{0}`")]
    FrozenGradient(String),

    #[error("reference signal has zero power")]
    ZeroReference,

    #[error("reference signal is constant")]
    ConstantReference,

    #[error("zero-power input: {0}")]
    ZeroPower(&'static str),

    #[error("signal too short for analysis: {0}")]
    SignalTooShort(String),

    #[error("unsupported sample rate {0} Hz")]
    UnsupportedRate(u32),

    #[error("dynamic mode requires a condition signal")]
    MissingCondition,

    #[error("stream already flushed")]
    Flushed,

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Checkpoint(#[from] crate::codec::CodecError),

    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
