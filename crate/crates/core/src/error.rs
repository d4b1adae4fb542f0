use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Least-squares estimation had no pilot energy on a subcarrier.
    #[error("singular channel estimate: subcarrier {subcarrier} has zero pilot energy")]
    SingularEstimate { subcarrier: usize },

    #[error("degenerate segment: {0}")]
    Degenerate(String),

    #[error("stream too short: {0}")]
    TooShort(String),

    #[error("filter design failed: {0}")]
    FilterDesign(String),

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("relative metric undefined: true value at index {index} is zero")]
    ZeroReference { index: usize },

    #[error("split error: {0}")]
    Split(String),

    #[error("beat pairing failed: {0}")]
    Pairing(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("integrity error in {}: {detail}", path.display())]
    Integrity { path: PathBuf, detail: String },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
