use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("vector must be non-empty with finite entries: {0}")]
    InvalidVector(String),

    #[error("degenerate plane: anchor offsets are collinear or zero (|cos| = {cos})")]
    DegeneratePlane { cos: f64 },

    #[error("mask has no active coordinates to sample from")]
    EmptySubspace,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("training diverged at step {step}{} (loss {loss})", level.map(|l| format!(" of level {l}")).unwrap_or_default())]
    Divergence {
        level: Option<usize>,
        step: usize,
        loss: f64,
    },

    #[error("pruning exhausted: only {active} active prunable coordinates remain")]
    Exhausted { active: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cosine similarity undefined for a zero vector")]
    UndefinedCosine,

    #[error("every one of {n} radius searches was censored")]
    DegenerateProfile { n: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("label {label} out of range for {classes} classes at {location}")]
    LabelRange {
        label: usize,
        classes: usize,
        location: String,
    },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("checkpoint checksum mismatch: header says {expected:08x}, payload is {found:08x}")]
    ChecksumMismatch { expected: u32, found: u32 },

    #[error("missing artifact {name} in {}; expected: {}", dir.display(), expected.join(", "))]
    MissingArtifact {
        name: String,
        dir: PathBuf,
        expected: Vec<String>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NumericalFailure(_)
            | Error::Divergence { .. }
            | Error::DegenerateProfile { .. }
            | Error::DegeneratePlane { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        Error::Dimension { expected, found }
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::dim(expected, found))
    }
}
