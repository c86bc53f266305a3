//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors produced by the library's domain checks and I/O paths.
#[derive(Debug, Error)]
pub enum ForgeError {
    /// An image, matrix, or buffer had dimensions outside a function's domain.
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    /// Two inputs that must agree in shape did not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A referenced id could not be resolved against the provided store.
    #[error("unresolved reference: {0}")]
    Unresolved(String),

    /// A document's vision span cannot fit in the packing context.
    #[error("document {doc_id} rejected: vision span of {span} tokens exceeds context {context}")]
    SpanTooLong {
        doc_id: String,
        span: usize,
        context: usize,
    },

    /// A numeric input or intermediate value was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A sampling pool was smaller than the requested draw.
    #[error("insufficient pool: {0}")]
    InsufficientPool(String),

    /// No uniform LoRA rank lands inside the requested fraction band.
    /// Carries the nearest achievable (rank, fraction) alternatives.
    #[error("no rank reaches the target fraction band; nearest alternatives: {}",
        format_alternatives(.nearest))]
    LoraBandUnreachable { nearest: Vec<(usize, f64)> },

    /// A caption with augmentation tags failed to parse.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A value fell outside the documented range for a parameter.
    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_alternatives(alts: &[(usize, f64)]) -> String {
    alts.iter()
        .map(|(r, f)| format!("r={} -> {:.4}%", r, f * 100.0))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, ForgeError>;
