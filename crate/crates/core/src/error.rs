use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("constant frame{}: all live pixels equal {value}", .id.as_ref().map(|s| format!(" {s}")).unwrap_or_default())]
    ConstantFrame { id: Option<String>, value: f64 },

    #[error("negative intensity {value} at pixel {index}")]
    NegativeIntensity { index: usize, value: f64 },

    #[error("high-count frame of pair {0} integrates to zero")]
    ZeroIntegral(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite activation after layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("config: {0}")]
    Config(String),

    #[error("manifest: {0}")]
    Manifest(String),

    /// Input that holds nothing to work on, such as an empty history.
    #[error("{0}")]
    NoData(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::NonFiniteActivation { .. }
            | Error::NonFiniteGradient { .. }
            | Error::Diverged { .. }
            | Error::NotConverged(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
