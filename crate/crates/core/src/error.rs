use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum So3Error {
    #[error("quaternion is not unit norm (norm = {norm})")]
    NonUnitQuaternion { norm: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("clone timestamp {t} is not newer than the latest clone at {latest}")]
    NonIncreasingClone { t: f64, latest: f64 },
    #[error("clone window is full ({max} clones); marginalize first")]
    WindowFull { max: usize },
    #[error("no clones to marginalize")]
    NoClones,
    #[error("correction has length {got}, state error dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("IMU timestamps are not strictly increasing at t = {t}")]
    NonMonotonic { t: f64 },
    #[error("IMU samples do not cover [{from}, {to}]")]
    NotCovered { from: f64, to: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpsError {
    #[error("measurement time {t} is outside the clone window [{start}, {end}]")]
    OutsideWindow { t: f64, start: f64, end: f64 },
    #[error("innovation covariance is singular")]
    SingularInnovation,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("time {t} is outside the trajectory span [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid sensor configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no timestamps could be associated between the two trajectories")]
    EmptyAssociation,
    #[error("calibration trace is empty")]
    EmptyTrace,
    #[error("timestamps must be strictly increasing (at t = {t})")]
    NonIncreasing { t: f64 },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("line {line}: expected `key=value`")]
    Syntax { line: usize },
    #[error("malformed JSON config: {0}")]
    Json(String),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: field `{field}`: {reason}")]
    Parse {
        path: String,
        row: usize,
        field: String,
        reason: String,
    },
}

/// Top-level error used by the command layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error("filter diverged at t = {t}")]
    Diverged { t: f64 },
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Sim(_) => 2,
            Error::Io(_) => 3,
            Error::Diverged { .. } => 4,
            Error::Eval(_) | Error::State(_) | Error::Propagation(_) => 5,
        }
    }
}
