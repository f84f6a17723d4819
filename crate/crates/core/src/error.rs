//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

/// All failure modes surfaced by the library.
///
/// The CLI maps these onto process exit codes: anything input-shaped
/// (files, labels, shapes, formats) is a data failure, anything numeric
/// (divergence, non-finite gradients) is a training failure.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer extents do not line up.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A value lies outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An index or label is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An architecture, config, or checkpoint failed structural validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// Stored bytes do not match their checksum or declared length.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A text record could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A file or directory does not have the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// Imported data does not match the documented external layout.
    #[error("import error: {0}")]
    Import(String),

    /// Dataset-level problem (empty set, bad label, missing field).
    #[error("data error: {0}")]
    Data(String),

    /// Optimizer received a non-finite gradient or inconsistent state.
    #[error("optimizer error: {0}")]
    Optimizer(String),

    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by numeric trouble rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Optimizer(_) | Error::Diverged(_))
    }
}
