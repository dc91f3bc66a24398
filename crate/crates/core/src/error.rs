use std::path::{Path, PathBuf};

/// Errors produced across the rendering, stylization and I/O layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("scene has no gaussians")]
    EmptyScene,
    #[error("upstream gradient has {got} values, forward pass produced {expected}")]
    MismatchedForward { expected: usize, got: usize },
    #[error("camera list is empty")]
    EmptyCameraList,
    #[error("group size must be at least 1")]
    InvalidGroupSize,
    #[error("resolution {width}x{height} is not divisible by patch size {patch}")]
    NonDivisibleResolution { width: usize, height: usize, patch: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("group members are at different timesteps")]
    TimestepMismatch,
    #[error("timestep index {index} out of range for {steps} steps")]
    IndexOutOfRange { index: usize, steps: usize },
    #[error("scheduling coefficient at index {0} is not positive")]
    DegenerateAlpha(usize),
    #[error("image {width}x{height} is smaller than the extractor receptive size {min}")]
    TooSmallImage { width: usize, height: usize, min: usize },
    #[error("feature channel mismatch: {render} vs {style}")]
    ChannelMismatch { render: usize, style: usize },
    #[error("feature map is empty")]
    EmptyFeatureMap,
    #[error("descriptor is all zeros")]
    ZeroDescriptor,
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sequence needs at least 2 frames, got {0}")]
    TooShort(usize),
    #[error("loss diverged at iteration {iteration} (value {value})")]
    DivergenceDetected { iteration: usize, value: f64 },
    #[error("{path}:{line}: {msg}")]
    MalformedFile { path: PathBuf, line: usize, msg: String },
    #[error("unsupported camera model {0}")]
    UnsupportedCameraModel(String),
    #[error("no stylized targets; run the dataset update first")]
    MissingTargets,
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("PLY body truncated: expected {expected} bytes, found {found}")]
    TruncatedBody { expected: usize, found: usize },
    #[error("malformed feature file: {0}")]
    MalformedFeatureFile(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyScene => "EmptyScene",
            Error::MismatchedForward { .. } => "MismatchedForward",
            Error::EmptyCameraList => "EmptyCameraList",
            Error::InvalidGroupSize => "InvalidGroupSize",
            Error::NonDivisibleResolution { .. } => "NonDivisibleResolution",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::TimestepMismatch => "TimestepMismatch",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::DegenerateAlpha(_) => "DegenerateAlpha",
            Error::TooSmallImage { .. } => "TooSmallImage",
            Error::ChannelMismatch { .. } => "ChannelMismatch",
            Error::EmptyFeatureMap => "EmptyFeatureMap",
            Error::ZeroDescriptor => "ZeroDescriptor",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::TooShort(_) => "TooShort",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::MissingTargets => "MissingTargets",
            Error::MalformedFile { .. } => "MalformedFile",
            Error::UnsupportedCameraModel(_) => "UnsupportedCameraModel",
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::TruncatedBody { .. } => "TruncatedBody",
            Error::MalformedFeatureFile(_) => "MalformedFeatureFile",
            Error::Config(_) => "Config",
            Error::Image(_) => "Image",
            Error::Io(_) => "Io",
        }
    }
}

/// Wraps an I/O error so its message names the file involved.
pub(crate) fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub type Result<T> = std::result::Result<T, Error>;
