use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("CRS mismatch: {left:?} vs {right:?}")]
    CrsMismatch { left: String, right: String },

    #[error("area-mean resampling needs an integer ratio, got {source_m} m -> {target_m} m (ratio {ratio})")]
    NonIntegerRatio {
        source_m: f64,
        target_m: f64,
        ratio: f64,
    },

    #[error("band {band} out of range for raster with {bands} band(s)")]
    BandOutOfRange { band: usize, bands: usize },

    #[error("malformed raster header: {0}")]
    MalformedHeader(String),

    #[error("payload length mismatch: header declares {expected} float32 values, found {found_bytes} bytes")]
    PayloadLength { expected: usize, found_bytes: usize },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("degenerate polygon ring with {0} vertices")]
    DegenerateRing(usize),

    #[error("insufficient pure patches for the equal dataset: need {needed} all-water and {needed} all-ice, have {water} and {ice}")]
    InsufficientPurePatches {
        needed: usize,
        water: usize,
        ice: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("backward called before forward on layer {0}")]
    BackwardBeforeForward(String),

    #[error("non-finite gradient in parameter {param} (element {index}, value {value})")]
    NonFiniteGradient {
        param: String,
        index: usize,
        value: f64,
    },

    #[error("non-finite loss {loss} in batch {batch} (patches: {provenance})")]
    NonFiniteLoss {
        loss: f64,
        batch: usize,
        provenance: String,
    },

    #[error("non-finite gradient for {param} in batch {batch} (patches: {provenance})")]
    NonFiniteBatchGradient {
        param: String,
        batch: usize,
        provenance: String,
    },

    #[error("target value {0} is not 0 or 1")]
    InvalidTarget(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad or missing input data rather than by
    /// misuse of the API.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_))
    }
}
