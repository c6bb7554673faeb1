//! Crate-wide error type.
//!
//! Parse errors always carry the 1-based line (or CSV row) that produced
//! them; file-level context is attached by the loaders via [`Error::in_file`].

use std::path::{Path, PathBuf};

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Attaches a file path to an error produced while parsing its contents.
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: invalid {field} '{token}'")]
    InvalidNumber {
        line: usize,
        field: &'static str,
        token: String,
    },

    #[error("line {line}: {field} {value} outside valid range")]
    OutOfRange {
        line: usize,
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("line {line}: unknown class id {id}")]
    UnknownClass { line: usize, id: u32 },

    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("duplicate image id '{id}'")]
    DuplicateImageId { id: String },

    #[error("duplicate class id {id} in class table")]
    DuplicateClassId { id: u32 },

    #[error("invalid bounding box: {message}")]
    InvalidBox { message: String },

    #[error("iou threshold {value} outside (0, 1]")]
    InvalidIouThreshold { value: f64 },

    #[error("precision undefined: no detections (TP + FP = 0)")]
    UndefinedPrecision,

    #[error("recall undefined: no ground-truth positives (TP + FN = 0)")]
    UndefinedRecall,

    #[error("no ground-truth positives for class '{class}' (TP + FN = 0)")]
    NoPositives { class: String },

    #[error("no class has any ground truth; nothing to evaluate")]
    NothingToEvaluate,

    #[error("cannot average an empty AP list")]
    EmptyApList,

    #[error("power trace row {row}: timestamp {t} not after previous {prev}")]
    TimestampOrder { row: usize, t: f64, prev: f64 },

    #[error("power trace row {row}: negative power {value} mW")]
    NegativePower { row: usize, value: f64 },

    #[error("power trace: {message}")]
    TraceFormat { message: String },

    #[error("power trace has {found} samples, need at least {need}")]
    InsufficientSamples { found: usize, need: usize },

    #[error("invalid run metrics: {message}")]
    InvalidRun { message: String },

    #[error("run '{run_id}' exceeds group maximum: {message}")]
    RunExceedsMaximum { run_id: String, message: String },

    #[error("EDP group needs at least 2 runs, got {found}")]
    GroupTooSmall { found: usize },

    #[error("split ratios {ratios:?} sum to {sum}, expected 1")]
    RatioSum { ratios: [f64; 3], sum: f64 },

    #[error("dataset has no images")]
    EmptyDataset,

    #[error("fold count {k} invalid for dataset of {n_images} images (need 2 <= k <= {n_images})")]
    InvalidFoldCount { k: usize, n_images: usize },

    #[error("dispersion needs at least 2 values, got {found}")]
    TooFewValues { found: usize },

    #[error("record '{run_id}': missing field '{field}' required by {layout} layout")]
    MissingField {
        run_id: String,
        field: &'static str,
        layout: &'static str,
    },

    #[error("invalid experiment record '{run_id}': {message}")]
    InvalidRecord { run_id: String, message: String },

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Wraps `self` with the path of the file it came from.
    pub fn in_file(self, path: &Path) -> Error {
        Error::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}
