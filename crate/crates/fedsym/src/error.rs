//! Error types shared across the crate.

use thiserror::Error;

use crate::entropy::SolverResult;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("class counts are all zero")]
    InvalidDistribution,
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("target beta {0} outside [0, 1]")]
    BetaOutOfRange(f64),
    #[error("target beta {beta} unreachable: at most {max_achievable} with this sample budget")]
    InfeasibleTarget { beta: f64, max_achievable: f64 },
    #[error("solver did not reach tolerance; best achieved beta {}", .0.achieved_beta)]
    NoConvergence(Box<SolverResult>),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad IDX magic 0x{found:08x} in {path} (expected 0x{expected:08x})")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("truncated IDX file {path}: needed {needed} bytes, have {have}")]
    TruncatedFile {
        path: String,
        needed: usize,
        have: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("class {class} needs {needed} samples but only {available} are available")]
    Infeasible {
        class: usize,
        needed: u64,
        available: u64,
    },
    #[error(transparent)]
    Solver(#[from] EntropyError),
    #[error("labels_per_client {0} outside 1..={1}")]
    BadLabelsPerClient(usize, usize),
    #[error("need at least one client")]
    NoClients,
    #[error("dirichlet alpha must be positive, got {0}")]
    BadAlpha(f64),
}

#[derive(Debug, Error)]
pub enum FlError {
    #[error("client {0} has an empty shard")]
    EmptyShard(usize),
    #[error("parameter shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("sample index {index} out of range for store of {n} samples")]
    BadSampleIndex { index: usize, n: usize },
    #[error("feature dimension mismatch: model expects {expected}, data has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad model file magic 0x{0:08x}")]
    BadModelMagic(u32),
}

#[derive(Debug, Error)]
pub enum CkaError {
    #[error("a centered input matrix is all zero")]
    DegenerateInput,
    #[error("row count mismatch: {0} vs {1}")]
    RowMismatch(usize, usize),
    #[error("need at least 2 models, got {0}")]
    TooFewModels(usize),
}
