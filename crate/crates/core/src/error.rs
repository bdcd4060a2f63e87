use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("PLY parse error at byte {offset}: {message}")]
    Ply { offset: usize, message: String },

    #[error("attributes required: PLY vertex element lacks red/green/blue properties")]
    AttributesRequired,

    #[error("empty cloud")]
    EmptyCloud,

    #[error("patch cover incomplete: point {0} is not owned by any patch")]
    PatchCoverIncomplete(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bitstream underrun")]
    BitstreamUnderrun,

    #[error("corrupt stream")]
    CorruptStream,

    #[error("malformed bitstream: {0}")]
    Bitstream(String),

    #[error("model/stream mismatch")]
    ModelMismatch,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("disjoint RD ranges")]
    DisjointRanges,

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
