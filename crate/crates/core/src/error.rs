use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: String,
        detail: String,
    },

    #[error("input `{0}` is not bound")]
    UnboundInput(String),

    #[error("parameter `{0}` is not bound")]
    UnboundParam(String),

    #[error("backward from a non-scalar output {shape:?} requires an explicit cotangent")]
    NonScalarOutput { shape: [usize; 2] },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("data error at row {row}, column {column}: {detail}")]
    Data {
        row: usize,
        column: String,
        detail: String,
    },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFinite(what.into())
    }
}
