use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("tracklet has no frames")]
    EmptyTracklet,

    #[error("mean embedding is degenerate (norm {0:e})")]
    DegenerateAverage(f64),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient data: need {needed} procedures, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("tracklet of {len} frames cannot be split with fractions ({a}, {b})")]
    SplitInfeasible { len: usize, a: f64, b: f64 },

    #[error("calibration needs at least one negative pair")]
    NoNegatives,

    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),

    #[error("tracklet {0} has no ground-truth entity")]
    MissingGroundTruth(u64),

    #[error("entity {0} has no class label")]
    MissingLabel(u64),

    #[error("partition mismatch: missing {missing:?}, extra {extra:?}")]
    PartitionMismatch { missing: Vec<u64>, extra: Vec<u64> },

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }
}
