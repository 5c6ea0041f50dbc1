//! Error types shared across the crate.

use crate::denoiser::BlockId;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes disagree where they must match. Carries both shapes.
    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    Dimension {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A scalar or structural argument is out of its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A NaN or infinity reached a place that requires finite values.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An attention hook returned replacement tensors with the wrong shape.
    #[error("hook contract violation: {0}")]
    HookContract(String),

    /// Two captures were attempted for the same (block, timestep) slot.
    #[error("duplicate attention snapshot for {block} at t={t}")]
    CaptureConflict { block: BlockId, t: usize },

    /// Injection was requested for a (block, timestep) with no stored snapshot.
    #[error("missing attention snapshot for {block} at t={t}")]
    InjectionMiss { block: BlockId, t: usize },

    /// Malformed input bytes; `offset` points at the offending byte.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Structurally valid input in an unsupported variant.
    #[error("unsupported format: {0}")]
    Format(String),

    /// Filesystem failure, tagged with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A pipeline stage failed; wraps the underlying error with the stage name.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            context: context.into(),
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
