//! Crate-wide error type.
//!
//! Library code never panics on bad user input: shape mismatches, malformed
//! files, out-of-range hyperparameters and degenerate statistics all surface
//! as [`Error`] values. Panics are reserved for internal invariant violations
//! (indexing bugs), which are tested against.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric kernel was called with incompatible operand shapes.
    /// Carries both shapes so the message pinpoints the call site mistake.
    #[error("{op}: dimension mismatch, left operand is {}x{}, right operand is {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    /// A scalar argument or configuration field is outside its legal range.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A text input (dataset, schema, checkpoint, probability file) failed to
    /// parse. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Underlying file I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A computation produced NaN/Inf where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Training loss became NaN; reports the epoch (1-based) that diverged.
    #[error("training diverged: loss is NaN at epoch {epoch}")]
    Diverged { epoch: usize },

    /// The training set is empty.
    #[error("empty training set")]
    EmptyDataset,

    /// AUC is undefined because the prediction set holds a single class.
    #[error("AUC undefined: prediction set contains only one label class")]
    AucUndefined,

    /// Relative information gain is undefined for a degenerate base rate.
    #[error("RIG undefined: base rate is {0} (needs both classes present)")]
    DegenerateBaseRate(f64),

    /// A checkpoint does not match the dataset schema it is evaluated on.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// A checkpoint file is structurally invalid.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
