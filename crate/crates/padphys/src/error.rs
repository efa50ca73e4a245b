use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A NaN or infinity showed up where only finite values are allowed.
    /// `context` names the operation (and, when known, the layer) so the
    /// failure can be traced without a debugger.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("backward already ran on this tape; record a new forward pass first")]
    TapeSpent,

    #[error("backward target must be the scalar result of a recorded forward pass")]
    BadLossNode,

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("config hash mismatch: weights were saved for configuration {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn nonfinite(context: impl Into<String>) -> Self {
        Error::NonFinite { context: context.into() }
    }

    /// True for failures of the numeric kind (NaN/Inf), which the CLI
    /// reports with a distinct exit code.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }

    /// Prefix the context of a numeric failure with the layer that produced
    /// it; other error kinds pass through unchanged.
    pub fn in_layer(self, layer: &str) -> Self {
        match self {
            Error::NonFinite { context } => Error::NonFinite { context: format!("{layer} ({context})") },
            other => other,
        }
    }
}
