use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing stream `{stream}` in {dir}")]
    MissingStream { dir: PathBuf, stream: &'static str },
    #[error("schema error in {file}: {msg}")]
    SchemaError { file: PathBuf, msg: String },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("sensor streams do not cover any frame timestamp ({0})")]
    EmptyOverlap(&'static str),
    #[error("no gripper calibration for platform {0}")]
    UnknownPlatform(String),
    #[error("cannot segment robot actions: {0}")]
    SegmentationAmbiguous(String),
    #[error("split spec error: {0}")]
    SplitSpecError(String),
    #[error("trial has no frames")]
    EmptyTrial,
    #[error("backbone contract violated: {0}")]
    BackboneContractError(String),
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("topology error: {0}")]
    TopologyError(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    DivergenceError { epoch: usize, loss: f64 },
    #[error("robot action segment {0} is empty")]
    MissingSegment(&'static str),
    #[error("missing target for head {0}")]
    MissingTarget(&'static str),
    #[error("empty track")]
    EmptyTrack,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty list")]
    EmptyList,
    #[error("trial {0} has no label tracks")]
    NoLabels(String),
    #[error("scenario script error: {0}")]
    ScriptError(String),
    #[error("unsupported table {0} (expected 3, 4, 5 or 6)")]
    UnsupportedTable(u32),
    #[error("unsupported video container {0}; decode it to frames/%06d.png first")]
    UnsupportedVideo(PathBuf),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn schema(file: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::SchemaError { file: file.into(), msg: msg.into() }
    }
}
