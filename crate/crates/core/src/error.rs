use thiserror::Error;

/// Errors produced by the lane toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lane: {0}")]
    InvalidLane(String),
    #[error("anchor is near-horizontal (|cos theta| = {cos_theta:e})")]
    NearHorizontalAnchor { cos_theta: f64 },
    #[error("invalid top-k: k = {k} exceeds {len} candidates")]
    InvalidK { k: usize, len: usize },
    #[error("candidate {index} has no one-to-one score")]
    MissingO2OScores { index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("infeasible assignment: {gts} ground truths but only {preds} predictions")]
    InfeasibleAssignment { gts: usize, preds: usize },
    #[error("lane spans {rows} rows, need at least {needed}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Validation failures map to exit code 2, I/O failures to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
