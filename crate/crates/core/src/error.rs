use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("variable {0} is not recorded on this tape")]
    UnknownVariable(usize),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("distortion {index} failed: {source}")]
    Distortion {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("class {0} has no training samples")]
    EmptyClass(usize),

    #[error("statistics fingerprint {found} does not match model fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("attack set is empty: {0}")]
    EmptyAttackSet(String),

    #[error("not enough correctly predicted samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("scored set must contain both legitimate and adversarial samples ({legitimate} legitimate, {adversarial} adversarial)")]
    SingleClass {
        legitimate: usize,
        adversarial: usize,
    },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("truncated file at byte {offset}: expected {expected} more bytes, found {actual}")]
    Truncated {
        offset: u64,
        expected: u64,
        actual: u64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
