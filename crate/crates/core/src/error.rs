use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },

    #[error("device index {index} out of range (K = {count})")]
    DeviceIndex { index: usize, count: usize },

    #[error("beam vector has {got} entries, expected {expected}")]
    BeamLength { got: usize, expected: usize },

    #[error("beam entry {index} has modulus {modulus}, violating the {mode} constraint")]
    BeamModulus {
        index: usize,
        modulus: f64,
        mode: &'static str,
    },

    #[error("case 3 requires {expected} offloading beams, got {got}")]
    MissingBeams { expected: usize, got: usize },

    #[error("allocation shape mismatch: {0}")]
    AllocationShape(String),

    #[error("QoS requirements cannot be met: {0}")]
    QosInfeasible(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("root bracket not found after {doublings} doublings")]
    BracketGrowth { doublings: usize },

    #[error("beamforming anchor is infeasible: {0}; re-initialise the beams")]
    InfeasibleAnchor(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("instance too large for brute force: {0}")]
    OracleSize(String),

    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),

    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn params(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParams {
            field,
            reason: reason.into(),
        }
    }
}
