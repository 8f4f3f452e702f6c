use thiserror::Error;

use crate::world::Family;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("box half extents must be positive, got {half_length} x {half_width}")]
    InvalidBox { half_length: f64, half_width: f64 },
    #[error("polyline needs at least 2 points, got {0}")]
    PolylineTooShort(usize),
    #[error("polyline segment {0} has zero length")]
    DegenerateSegment(usize),
    #[error("polygon needs at least 3 vertices, got {0}")]
    PolygonTooSmall(usize),
    #[error("polygon has zero area")]
    DegeneratePolygon,
    #[error("polygon edges {first} and {second} cross")]
    SelfIntersecting { first: usize, second: usize },
}

/// Failures reading or writing the binary and line-delimited artifact formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unexpected end of data while reading {0}")]
    Truncated(&'static str),
    #[error("content hash mismatch: stored {stored:016x}, computed {computed:016x}")]
    HashMismatch { stored: u64, computed: u64 },
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed record: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("config for family {family:?} cannot keep the ego inside the drivable area: {reason}")]
    EgoOutsideDrivable { family: Family, reason: String },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot build {k} clusters from {candidates} candidates")]
    TooFewCandidates { k: usize, candidates: usize },
    #[error("trajectory violates invariant: {0}")]
    InvalidTrajectory(String),
    #[error("empty trajectory list")]
    Empty,
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("metric weights must be non-negative with a positive sum")]
    InvalidWeights,
    #[error("{what} hash mismatch: expected {expected:016x}, found {found:016x}")]
    HashMismatch {
        what: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("dimension mismatch: table is {table_frames}x{table_actions}, inputs are {frames}x{actions}")]
    Dimensions {
        table_frames: usize,
        table_actions: usize,
        frames: usize,
        actions: usize,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite activation in layer {0}")]
    NonFinite(String),
    #[error("shape mismatch for {what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("non-finite advantage value")]
    NonFiniteAdvantage,
    #[error("scoring target {value} outside [0, 1]")]
    TargetRange { value: f64 },
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
