use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{}:{line}: {field} has dimension {got}, expected {expected}", path.display())]
    DimInconsistency {
        path: PathBuf,
        line: usize,
        field: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{}: not a {kind} file", path.display())]
    BadMagic { path: PathBuf, kind: &'static str },

    #[error("{}: format version {found}, this build reads version {expected}", path.display())]
    FormatVersionMismatch { path: PathBuf, expected: u32, found: u32 },

    #[error("{}: file is truncated", path.display())]
    Truncated { path: PathBuf },

    #[error("{}: checksum mismatch, file is corrupt", path.display())]
    ChecksumMismatch { path: PathBuf },

    #[error("{}: {msg}", path.display())]
    Malformed { path: PathBuf, msg: String },

    #[error("index was built with checkpoint {index}, but checkpoint {checkpoint} was given")]
    FingerprintMismatch { index: String, checkpoint: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gradient check failed: max relative error {max_rel_error:e} in {tensor}[{index}]")]
    GradCheck {
        max_rel_error: f64,
        tensor: &'static str,
        index: usize,
    },

    #[error(transparent)]
    Core(#[from] calm_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 for IO and file format problems, 2 for invalid
    /// input or configuration, 3 for numeric failures, 4 for a checkpoint
    /// that does not match the index.
    pub fn exit_code(&self) -> i32 {
        use calm_core::Error as C;
        match self {
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::FormatVersionMismatch { .. }
            | Error::Truncated { .. }
            | Error::ChecksumMismatch { .. }
            | Error::Malformed { .. } => 1,
            Error::Parse { .. } | Error::DimInconsistency { .. } | Error::Config(_) => 2,
            Error::GradCheck { .. } => 3,
            Error::FingerprintMismatch { .. } => 4,
            Error::Core(e) => match e {
                C::NonFinite(_) | C::NonFiniteEvaluation { .. } | C::NonFiniteLoss { .. } | C::ZeroNorm => 3,
                _ => 2,
            },
        }
    }
}
