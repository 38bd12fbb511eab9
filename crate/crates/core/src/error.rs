use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes that do not fit together.
    #[error("{op}: dimension mismatch (expected {expected}, found {found})")]
    Dimension {
        op: &'static str,
        expected: String,
        found: String,
    },

    /// Invalid hyperparameter or model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API called in the wrong order or with arguments outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed, missing or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Parameter estimation impossible with the given counts.
    #[error("fit error: {0}")]
    Fit(String),

    /// A face box that is empty once clamped to the image.
    #[error("face box ({x}, {y}, {w}, {h}) is empty after clamping to a {width}x{height} image")]
    SkipFace {
        x: i64,
        y: i64,
        w: i64,
        h: i64,
        width: usize,
        height: usize,
    },

    /// Aggregation over an empty face list.
    #[error("no faces to aggregate")]
    NoFaces,

    /// Training diverged.
    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, loss: f64 },

    /// Checkpoint written by an incompatible format version.
    #[error("unsupported model format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    /// Checkpoint bytes failed validation.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a short description of what was being done.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
