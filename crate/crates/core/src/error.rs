use std::path::PathBuf;

use thiserror::Error;

/// Which side of a mesh comparison an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshSide {
    Predicted,
    GroundTruth,
}

impl std::fmt::Display for MeshSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeshSide::Predicted => f.write_str("predicted"),
            MeshSide::GroundTruth => f.write_str("ground-truth"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("missing pose for image index {0}")]
    MissingPose(usize),
    #[error("image {index}: {msg}")]
    Image { index: usize, msg: String },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("lattice misalignment: {0}")]
    LatticeMisaligned(String),
    #[error("cannot upsample beyond the finest level")]
    FinestLevel,
    #[error("voxel sets differ: {0}")]
    VoxelSetMismatch(String),
    #[error("{0} mesh is empty")]
    EmptyMesh(MeshSide),
    #[error("no valid pixels to evaluate")]
    NoValidPixels,
    #[error("training diverged: non-finite loss at step {0}")]
    Diverged(usize),
    #[error("mesh format: {0}")]
    MeshFormat(String),
    #[error("triangle index {index} out of range for {count} vertices")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("config: {0}")]
    Config(String),
    #[error("scene: {0}")]
    Scene(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
