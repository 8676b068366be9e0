use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis}: {detail}")]
    Shape {
        op: &'static str,
        axis: &'static str,
        detail: String,
    },

    #[error("{0}: invalid parameter: {1}")]
    Param(&'static str, String),

    #[error("batchnorm: degenerate batch, need at least 2 values per channel in train mode (got {0})")]
    DegenerateBatch(usize),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("non-finite value in {layer}: {detail}")]
    Numeric { layer: String, detail: String },

    #[error("unknown preset `{0}` (expected one of mfpt, jnu, seu, synthetic, mfpt-4block)")]
    UnknownPreset(String),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("format: {0}")]
    Format(String),

    #[error("no spike statistics recorded; run a forward pass first")]
    NoStats,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, axis: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        axis,
        detail: detail.into(),
    }
}
