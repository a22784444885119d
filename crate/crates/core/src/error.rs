use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("vector norm below 1e-12")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("empty sequence")]
    EmptySequence,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("objective returned a non-finite value at coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },
    #[error("no cached activations for batch slot {0}")]
    MissingCache(usize),
    #[error("anchor `{0}` not in style table")]
    AnchorMissing(String),
    #[error("style table needs at least 2 rows, has {0}")]
    TableTooSmall(usize),
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
    #[error("need {needed} items, only {available} available")]
    InsufficientItems { needed: usize, available: usize },
    #[error("dataset has {got} items, need at least {needed}")]
    DatasetTooSmall { needed: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step}: l_calm={l_calm}, l_tts_proxy={l_tts_proxy}")]
    NonFiniteLoss {
        step: usize,
        l_calm: f64,
        l_tts_proxy: f64,
    },
    #[error("N={n} out of range 1..={max}")]
    NOutOfRange { n: usize, max: usize },
    #[error("item `{0}` has no label")]
    UnlabeledItem(String),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
