use std::path::PathBuf;

use thiserror::Error;

use crate::style::SynthesisState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("odd extent {extent} on axis {axis} cannot be pooled 2x2")]
    OddExtent { axis: usize, extent: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error: {0}")]
    Decode(String),

    #[error("unsupported bit depth: {0}")]
    UnsupportedDepth(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("bad magic {found:?}, expected \"VGGW\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported VGGW version {0}")]
    VersionMismatch(u32),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("malformed weight file: {0}")]
    Malformed(String),

    #[error("weights missing for layer {0}")]
    MissingLayer(String),

    #[error("shape conflict for {name}: expected {expected:?}, found {found:?}")]
    ShapeConflict {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("unknown layer {0}")]
    UnknownLayer(String),

    #[error("activation for layer {0} missing from trace")]
    MissingActivation(String),

    #[error("cotangent given for uncaptured layer {0}")]
    UncapturedLayer(String),

    #[error("optimization diverged at iteration {}: non-finite loss", .state.iteration)]
    Diverged { state: Box<SynthesisState> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
