//! Crate-wide error type.
//!
//! Variants are grouped by failure class so a caller (notably the CLI) can
//! map them onto stable exit codes: configuration problems, data problems,
//! and numeric problems are distinguishable without string matching.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Operand shapes do not line up for the requested operation.
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// A NaN or infinity reached a public operation.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// A class label fell outside the classifier's output range.
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A text file failed to parse.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// A binary file did not start with the expected magic bytes.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    /// A binary file carries a format version this build does not read.
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    /// Declared dimensions disagree with the payload or companion files.
    #[error("header mismatch: {detail}")]
    HeaderMismatch { detail: String },

    /// An instance label references a class with no attribute row.
    #[error("label references class {class} which has no attribute row")]
    MissingAttribute { class: usize },

    /// Seen/unseen classes or index lists overlap where they must not.
    #[error("split overlap: {detail}")]
    SplitOverlap { detail: String },

    /// Any other dataset split invariant violation.
    #[error("invalid split: {detail}")]
    InvalidSplit { detail: String },

    #[error("empty {what}")]
    Empty { what: String },

    /// A user-supplied specification or configuration value is invalid.
    #[error("invalid spec: {detail}")]
    InvalidSpec { detail: String },
}

impl CoreError {
    pub fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        CoreError::ShapeMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        CoreError::NonFinite {
            context: context.into(),
        }
    }

    /// True for failures caused by dataset contents or files on disk.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            CoreError::Io(_)
                | CoreError::Parse { .. }
                | CoreError::BadMagic { .. }
                | CoreError::UnsupportedVersion { .. }
                | CoreError::HeaderMismatch { .. }
                | CoreError::MissingAttribute { .. }
                | CoreError::SplitOverlap { .. }
                | CoreError::InvalidSplit { .. }
                | CoreError::Empty { .. }
        )
    }

    /// True for failures of the numerics themselves.
    pub fn is_numeric_error(&self) -> bool {
        matches!(
            self,
            CoreError::ShapeMismatch { .. }
                | CoreError::NonFinite { .. }
                | CoreError::Diverged { .. }
                | CoreError::LabelOutOfRange { .. }
        )
    }
}
