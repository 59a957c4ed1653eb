use std::fmt;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by tensor operations, file formats, and the training
/// engine.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible with the operation.
    ShapeMismatch { op: &'static str, detail: String },
    /// An argument violated an operation precondition.
    InvalidArgument { op: &'static str, detail: String },
    /// A tensor handle refers to a tape epoch that has been reset.
    StaleTape { op: &'static str },
    /// A computation produced a non-finite value where one is not allowed.
    NonFinite { op: &'static str, detail: String },
    /// Reduction over an empty pixel set.
    EmptyMask { op: &'static str },
    /// Malformed file content (PFM/PGM/manifest/checkpoint).
    Format { what: &'static str, detail: String },
    /// Checkpoint magic bytes do not match.
    BadMagic,
    /// Checkpoint format version is unsupported.
    UnsupportedVersion(u32),
    /// Checkpoint file ends before the declared payload.
    Truncated,
    /// Checkpoint digest does not match the config + payload.
    DigestMismatch,
    /// I/O failure with file context.
    Io { path: String, source: std::io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::InvalidArgument { op, detail } => write!(f, "{op}: invalid argument: {detail}"),
            Error::StaleTape { op } => write!(f, "{op}: tensor belongs to a reset tape epoch"),
            Error::NonFinite { op, detail } => write!(f, "{op}: non-finite value: {detail}"),
            Error::EmptyMask { op } => write!(f, "{op}: no pixels selected by mask"),
            Error::Format { what, detail } => write!(f, "malformed {what}: {detail}"),
            Error::BadMagic => write!(f, "checkpoint: bad magic bytes"),
            Error::UnsupportedVersion(v) => write!(f, "checkpoint: unsupported format version {v}"),
            Error::Truncated => write!(f, "checkpoint: truncated file"),
            Error::DigestMismatch => write!(f, "checkpoint: digest mismatch (config or payload differs)"),
            Error::Io { path, source } => write!(f, "{path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
