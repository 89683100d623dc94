use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid count: {0}")]
    InvalidCount(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid energy: {0}")]
    InvalidEnergy(String),
    #[error("invalid exchange record: {0}")]
    InvalidRecord(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("invalid metric input: {0}")]
    InvalidMetric(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error("engine failure: {0}")]
    Engine(#[from] EngineError),
    /// Configuration or artifact problem tied to a key path, e.g. `dimensions[0].ladder`.
    #[error("{path}: {message}")]
    Key { path: String, message: String },
    #[error("unsupported format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn key(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Key {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Recoverable failure inside the dynamics engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("non-finite force at step {step}")]
    NonFiniteForce { step: u64 },
    #[error("non-finite energy")]
    NonFiniteEnergy,
    #[error("configuration has {got} coordinates, system expects {expected}")]
    Dimensionality { expected: usize, got: usize },
    #[error("restraint on coordinate {coordinate} but system has {dims} coordinates")]
    RestraintCoordinate { coordinate: usize, dims: usize },
    #[error("bad request: {0}")]
    BadRequest(String),
}
