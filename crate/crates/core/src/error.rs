use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("bit sequences have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("stochastic bus must have at least one channel")]
    ZeroWidth,
    #[error("max_cycles must be positive")]
    ZeroMaxCycles,
    #[error("counter maximum must be positive")]
    ZeroCounterMax,
    #[error("bus width {bus} does not match counter bank width {bank}")]
    WidthMismatch { bus: usize, bank: usize },
    #[error("counter bank must be zeroed before a run")]
    CountersNotZeroed,
    #[error("run timed out after {cycles} cycles without an overflow")]
    TimedOut { cycles: u64 },
    #[error("invalid fusion spec: {0}")]
    InvalidSpec(String),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("image of {width}x{height} is smaller than the 5x5 filter kernel")]
    ImageTooSmall { width: usize, height: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("coordinates ({x}, {y}) with disparity {d} are outside the valid region")]
    OutOfRange { x: usize, y: usize, d: usize },
    #[error("image dimensions differ: left {left:?}, right {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("metric input is empty")]
    EmptyInput,
    #[error("{path}: file not found")]
    NotFound { path: PathBuf },
    #[error("malformed image header: {0}")]
    MalformedHeader(String),
    #[error("truncated image data: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported bit depth (maxval {0}); only 8-bit images are accepted")]
    UnsupportedBitDepth(u32),
    #[error("unsupported image format {0:?}")]
    UnsupportedFormat(String),
    #[error("malformed distribution dump: {0}")]
    MalformedDump(String),
    #[error("{timeouts} of {pixels} pixels timed out (threshold {threshold})")]
    TimeoutThreshold {
        timeouts: usize,
        pixels: usize,
        threshold: f64,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::NotFound { .. } => 3,
            Error::MalformedHeader(_)
            | Error::Truncated { .. }
            | Error::UnsupportedBitDepth(_)
            | Error::UnsupportedFormat(_)
            | Error::MalformedDump(_) => 6,
            Error::TimeoutThreshold { .. } => 5,
            _ => 4,
        }
    }
}
