use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty context")]
    EmptyContext,

    #[error("dataset smaller than one batch")]
    DatasetTooSmall,

    #[error("mixing coefficient out of range")]
    MixCoefficientOutOfRange,

    #[error("no mixing partner available")]
    NoMixingPartner,

    #[error("synonym table required")]
    SynonymTableRequired,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: ce={ce}, cl={cl}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        ce: f64,
        cl: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
