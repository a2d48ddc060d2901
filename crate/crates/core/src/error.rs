use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter layouts are incompatible")]
    LayoutMismatch,

    #[error("direction has zero norm and cannot be normalized")]
    ZeroDirection,

    #[error("rescale target must be positive and finite, got {0}")]
    InvalidTarget(f64),

    #[error("layer index {index} is out of range for a model with {num_layers} layers")]
    InvalidLayer { index: usize, num_layers: usize },

    #[error("layer group `{0}` selects no parameters of a nonzero direction")]
    EmptyGroupDirection(String),

    #[error("parameter vector contains a non-finite value at component {0}")]
    NonFinite(usize),

    #[error("token id {token} is out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown task kind `{0}`")]
    UnknownTaskKind(String),

    #[error("unknown figure `{0}`; expected fig1..fig7 or table1")]
    UnknownFigure(String),

    #[error("evaluation failed at (alpha={alpha}, beta={beta}): {source}")]
    Cell {
        alpha: f64,
        beta: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
