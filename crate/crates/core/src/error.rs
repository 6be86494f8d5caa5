use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("index ({i}, {j}, {k}) out of bounds for grid {nx}x{ny}x{nz}")]
    OutOfBounds {
        i: usize,
        j: usize,
        k: usize,
        nx: usize,
        ny: usize,
        nz: usize,
    },

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("field kind mismatch: expected {expected}, got {actual}")]
    KindMismatch { expected: String, actual: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid sensor layout: {0}")]
    InvalidSensors(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular geometry: station {station} lies within {distance:.3e} m of cell {cell}")]
    SingularGeometry {
        station: usize,
        cell: usize,
        distance: f64,
    },

    #[error("injected volume {requested:.6e} m^3 exceeds reachable pore capacity {capacity:.6e} m^3")]
    CapacityExceeded { requested: f64, capacity: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("cannot normalize a constant gravity map (std = {0:e})")]
    DegenerateNormalization(f64),

    #[error("expected a raw (un-normalized) gravity map")]
    NormalizedInput,

    #[error("checksum mismatch for {path}: manifest {expected}, payload {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("truncated payload {path}: {len} bytes is not a whole number of f32 values")]
    Truncated { path: PathBuf, len: u64 },

    #[error("payload {path} holds {actual} values, manifest declares {expected}")]
    PayloadDimension {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported format version {0}")]
    FormatVersion(u32),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
