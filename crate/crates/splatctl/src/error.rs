//! Crate-wide error type. Variants are grouped so the CLI can map them to
//! distinct exit codes: configuration problems, data problems, and training
//! collapse are reported differently.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // Parameter-state errors.
    #[error("degenerate rotation: quaternion norm {0:.3e}")]
    DegenerateRotation(f64),
    #[error("opacity {0} outside (0, 1)")]
    OpacityOutOfRange(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("inconsistent topology edit: {0}")]
    InconsistentEdit(String),

    // Configuration errors.
    #[error("unknown config key(s): {0}")]
    UnknownConfigKey(String),
    #[error("invalid config value: {0}")]
    InvalidConfigValue(String),
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        source: std::io::Error,
    },

    // Dataset / model-file errors.
    #[error("missing manifest: {0}")]
    MissingManifest(PathBuf),
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("non-invertible pose for frame {0}")]
    NonInvertiblePose(usize),
    #[error("dataset has no frames")]
    EmptyDataset,
    #[error("malformed PLY header: {0}")]
    PlyHeader(String),
    #[error("PLY property mismatch: {0}")]
    PlyPropertyMismatch(String),
    #[error("PLY payload truncated: expected {expected} bytes, got {got}")]
    PlyTruncated { expected: usize, got: usize },
    #[error("image too small for SSIM window: {width}x{height} < {window}x{window}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    // Training collapsed to zero Gaussians; surfaced as a flag, not a panic.
    #[error("training collapsed: no Gaussians remain")]
    Collapsed,
}

impl Error {
    /// Process exit code class for the CLI: 2 config, 3 data, 4 collapse.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            UnknownConfigKey(_) | InvalidConfigValue(_) | ConfigRead { .. } => 2,
            Collapsed => 4,
            _ => 3,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
