use thiserror::Error;

/// Errors surfaced by the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: expected k >= 1")]
    InvalidDimension,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty input")]
    EmptyInput,

    #[error("empty memory bank")]
    EmptyBank,

    #[error("insufficient samples: need at least {needed}, have {seen}")]
    InsufficientSamples { needed: usize, seen: usize },

    #[error("matrix is not symmetric")]
    AsymmetricInput,

    #[error("shrinkage weight {0} outside [0, 1]")]
    InvalidShrinkage(f64),

    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),

    #[error("factorisation failed for every jitter up to {delta_max}")]
    NotFactorizable { delta_max: f64 },

    #[error("first reducer batch has {got} rows but {needed} components are tracked")]
    RankDeficientSeed { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),

    #[error("AUROC undefined: both classes must be present")]
    UndefinedAuroc,

    #[error("dataset changed between traversals (pass {pass})")]
    NonReiterableDataset { pass: u32 },

    #[error("descriptor block '{image_id}' contains non-finite values")]
    NonFiniteData { image_id: String },

    #[error("state format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checksum mismatch: file is corrupted")]
    ChecksumMismatch,

    #[error("file is truncated or malformed: {0}")]
    MalformedContainer(&'static str),

    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
