use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series for VM `{vm_id}` is empty")]
    EmptySeries { vm_id: String },

    #[error("length mismatch: expected {expected} ticks but VM `{vm_id}` has {actual}")]
    LengthMismatch {
        expected: usize,
        vm_id: String,
        actual: usize,
    },

    #[error("group `{vmm_id}` has no VMs")]
    EmptyGroup { vmm_id: String },

    #[error("non-finite sample {value}")]
    InvalidSample { value: f64 },

    #[error("insufficient history: need at least {required} samples, have {available}")]
    InsufficientHistory { required: u64, available: u64 },

    #[error("window must contain at least one value")]
    InvalidWindow,

    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),

    #[error("expected {expected} values per tick, got {actual}")]
    ArityMismatch { expected: usize, actual: usize },

    #[error("invalid synthetic spec: {field}: {message}")]
    InvalidSpec {
        field: &'static str,
        message: String,
    },

    #[error("interval [{start}, {end}] is outside series of length {len}")]
    IntervalOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("pool holds {available} VMs but {required} are needed per VMM")]
    PoolTooSmall { available: usize, required: usize },

    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("missing or unexpected header, expected `{expected}`")]
    MissingHeader { expected: &'static str },

    #[error("VM `{vm_id}` of VMM `{vmm_id}` is missing tick {missing_tick}")]
    NonRectangular {
        vmm_id: String,
        vm_id: String,
        missing_tick: usize,
    },

    #[error("no prediction for VMM `{0}`")]
    MissingPrediction(String),

    #[error("no label for VMM `{0}`")]
    MissingLabel(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data or parameters rather than
    /// the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
