//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("index sum {i} + {j} + {k} does not match degree {degree}")]
    IndexSumMismatch { degree: u32, i: u32, j: u32, k: u32 },

    #[error("invalid barycentric coordinate ({u}, {v}, {w}): {reason}")]
    InvalidBarycentric { u: f64, v: f64, w: f64, reason: &'static str },

    #[error("control net expects {expected} points for degree {degree}, got {got}")]
    ControlPointCount { degree: u32, expected: usize, got: usize },

    #[error("control net contains a non-finite coordinate")]
    NonFiniteControlPoint,

    #[error("unsupported degree {0} (expected {1})")]
    UnsupportedDegree(u32, u32),

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },

    #[error("empty point cloud")]
    EmptyPointCloud,

    #[error("empty point set passed to {0}")]
    EmptyPointSet(&'static str),

    #[error("empty mask passed to edge_sharpness")]
    EmptyMask,

    #[error("image {width}x{height} is smaller than the {window}x{window} comparison window")]
    ImageSmallerThanWindow { width: usize, height: usize, window: usize },

    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient for primitive id {prim_id} in group {group}")]
    NonFiniteGradient { prim_id: u64, group: &'static str },

    #[error("all primitives were pruned; the scene is empty")]
    AllPrimitivesPruned,

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: malformed manifest: {detail}")]
    MalformedManifest { path: PathBuf, detail: String },

    #[error("{path}: image is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    ImageSizeMismatch { path: PathBuf, got_w: u32, got_h: u32, want_w: u32, want_h: u32 },

    #[error("{path}: {0}", .detail)]
    ImageDecode { path: PathBuf, detail: String },

    #[error("checkpoint version {got} is not supported (expected {expected})")]
    CheckpointVersion { got: u32, expected: u32 },

    #[error("{path}: corrupt checkpoint: {detail}")]
    CorruptCheckpoint { path: PathBuf, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
