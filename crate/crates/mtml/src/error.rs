//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by dataset handling, the model, training and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// A camera view ended up with no identities or samples.
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),

    /// A sample violates a dataset invariant (non-finite feature, bad label, ...).
    #[error("invalid sample: {0}")]
    InvalidSample(String),

    /// The P×K sampler asked for more identities than a camera holds.
    #[error("insufficient identities: camera {camera_id} has {available}, need {requested}")]
    InsufficientIdentities {
        camera_id: usize,
        available: usize,
        requested: usize,
    },

    /// A dataset or report file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The file declares a format version this build does not read.
    #[error("unsupported format version: {0}")]
    UnsupportedVersion(u32),

    /// Vector or matrix dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A camera id with no classifier head was queried.
    #[error("no such head: camera {0}")]
    NoSuchHead(usize),

    /// A classification target lies outside the head's label space.
    #[error("label out of range: label {label} for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// A batch-level operation received zero samples.
    #[error("empty batch")]
    EmptyBatch,

    /// An identity with no images was asked for an averaged prediction.
    #[error("empty identity: label {label} in camera {camera_id}")]
    EmptyIdentity { camera_id: usize, label: usize },

    /// A non-finite value appeared during a forward/backward pass or update.
    #[error("numeric failure in {0}")]
    NumericFailure(String),

    /// Checkpoint file is truncated, versioned differently or shaped differently.
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    /// A multi-label assignment references an identity the dataset does not hold.
    #[error("stale assignment: ({camera_id}, {label}) not in dataset")]
    StaleAssignment { camera_id: usize, label: usize },

    /// Checkpoint and dataset disagree on dimensions.
    #[error("incompatible artifacts: {0}")]
    IncompatibleArtifacts(String),

    /// Evaluation was requested without the ground truth it needs.
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    /// A configuration value is out of its valid range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
