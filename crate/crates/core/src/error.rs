use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at sample {sample_index}")]
    NonFinite { sample_index: usize },

    #[error("bad magic in {path}: expected {expected:#010x}, got {actual:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        actual: u32,
    },

    #[error("truncated file {path}: needed {needed} bytes, had {available}")]
    Truncated {
        path: String,
        needed: usize,
        available: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("infeasible partition; deficient labels (label, requested, available): {deficient:?}")]
    InfeasiblePartition {
        deficient: Vec<(usize, usize, usize)>,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range (num_labels {num_labels})")]
    LabelOutOfRange { label: usize, num_labels: usize },

    #[error("no label has enough seed samples to fit")]
    NoFittableLabel,

    #[error("label {0} is not fitted in the augmenter")]
    UnfittedLabel(usize),

    #[error("linear system is singular")]
    SingularSystem,

    #[error("budget exhausted before the first round completed")]
    BudgetExhaustedEarly,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::InfeasiblePartition { .. } => 3,
            Error::BudgetExhaustedEarly => 4,
            _ => 1,
        }
    }
}
