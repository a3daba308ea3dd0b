use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("annotation out of bounds: {0}")]
    OutOfBounds(String),

    #[error("format error: {0}")]
    Format(String),

    /// Ground-truth parse failure. `space` names the offending parking space
    /// when it is known.
    #[error("parse error{}: {message}", space.as_ref().map(|s| format!(" in space {s}")).unwrap_or_default())]
    Parse {
        space: Option<String>,
        message: String,
    },

    /// Annotation document violation; `path` is a field path such as
    /// `spaces[0].points`.
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("class imbalance: {0}")]
    Imbalance(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("model checksum mismatch (file truncated or corrupted)")]
    Checksum,

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("model architecture mismatch: {0}")]
    Architecture(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(space: Option<&str>, message: impl Into<String>) -> Self {
        Error::Parse {
            space: space.map(str::to_owned),
            message: message.into(),
        }
    }

    /// Attaches a file path to an error.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping file-path wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self.root(), Error::Numerical(_))
    }
}
