use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("grid {nx}x{ny} is too small, need at least {min} nodes per axis")]
    GridTooSmall { nx: usize, ny: usize, min: usize },
    #[error("grid extents must satisfy max > min")]
    InvalidExtent,
    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("{snapshots} snapshots but {times} snapshot times")]
    SnapshotCount { snapshots: usize, times: usize },
    #[error("snapshot times must be strictly increasing within [0, 1]")]
    InvalidTimes,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid solver parameters: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite state after integrator step {step} (t = {time})")]
    Diverged { step: usize, time: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("ill-conditioned system ({0}); use a positive ridge")]
    IllConditioned(String),
    #[error("rank-deficient design (rank {rank} < {needed}); use a positive ridge")]
    RankDeficient { rank: usize, needed: usize },
    #[error("non-finite input data")]
    NonFinite,
    #[error("multi-index set size overflows")]
    Overflow,
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("unsupported schema version {found} (this build reads up to {supported})")]
    SchemaVersion { found: u32, supported: u32 },
    #[error("expected a {expected} container, found {found}")]
    Kind { expected: String, found: String },
    #[error("corrupt tensor {name}: {message}")]
    Corrupt { name: String, message: String },
    #[error("hash mismatch for {name}")]
    HashMismatch { name: String },
    #[error("predictions were made for dataset {predicted} but truth is {truth}")]
    DatasetMismatch { predicted: String, truth: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Top-level error for pipeline and harness operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
