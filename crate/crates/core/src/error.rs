use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("point clouds need dimension d >= 1")]
    ZeroDimension,

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-numeric token {token:?} at line {line}")]
    NonNumeric { line: usize, token: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("anchor count {k} outside 1..={n}")]
    AnchorCount { k: usize, n: usize },

    #[error("duplicate anchor index {0}")]
    DuplicateAnchor(usize),

    #[error("anchor index {index} out of range for {n} samples")]
    AnchorIndex { index: usize, n: usize },

    #[error("empty anchor set")]
    EmptyAnchors,

    #[error("entropic regularization must be positive and finite, got {0}")]
    InvalidRegularization(f64),

    #[error("marginal must be strictly positive and sum to one (sum = {0})")]
    NotNormalized(f64),

    #[error("sinkhorn did not converge in {iterations} iterations (marginal violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("plan marginals disagree with anchor masses (L1 error {0:e})")]
    MarginalMismatch(f64),

    #[error("time {0} outside the open unit interval")]
    TimeOutOfRange(f64),

    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),

    #[error("non-finite state during integration at step {step}")]
    Diverged { step: usize },

    #[error("bandwidth is zero: reference points must not all coincide")]
    DegenerateBandwidth,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("instance of size {size} exceeds the exact-oracle limit {limit}")]
    OracleSize { size: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
