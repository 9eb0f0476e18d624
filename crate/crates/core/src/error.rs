use thiserror::Error;

/// Errors produced anywhere in the estimation and decoding pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("line {line}: probability {prob} outside (0, 1)")]
    ProbabilityOutOfRange { line: usize, prob: f64 },

    #[error("only logical observable L0 is supported (found L{0})")]
    UnsupportedObservable(usize),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("syndrome not in the span of the detector error model: detector D{detector} is unreachable")]
    InconsistentSyndrome { detector: usize },

    #[error("shot data: {0}")]
    ShotFormat(String),

    #[error("mechanism {mechanism} triggers {detectors} detectors; the planar backend requires a graphlike model")]
    NotGraphlike { mechanism: usize, detectors: usize },

    #[error("planar embedding failed: {0}")]
    NonPlanar(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed contraction tree: {0}")]
    MalformedTree(String),

    #[error("missing forward cache for node {0}")]
    MissingCache(usize),

    #[error("problem too large for enumeration: {what} = {value} exceeds {limit}")]
    TooLarge {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("decoding is degenerate: no mechanism flips the logical observable")]
    NoLogical,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training failed at epoch {epoch}: {source}")]
    Training {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing data: {0}")]
    Missing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
