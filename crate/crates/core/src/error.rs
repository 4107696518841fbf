use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
    #[error("invalid DMP parameters: {0}")]
    Dmp(String),
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not a rotation: {0}")]
    NotRotation(String),
    #[error("finger count {0} exceeds the object's maximum of {1}")]
    FingerCount(usize, usize),
    #[error("{type_name} invariant violated: {detail}")]
    Invariant {
        type_name: &'static str,
        detail: String,
    },
    #[error("could not place object inside workspace after {0} attempts")]
    UncertaintyRejected(usize),
    #[error("pre-grasp pose {0:?} is outside the workspace")]
    Unreachable([f64; 3]),
    #[error("policy search: {0}")]
    Policy(String),
    #[error("payload decode failed: {0}")]
    Payload(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub fn invariant(type_name: &'static str, detail: impl Into<String>) -> Self {
        Error::Invariant {
            type_name,
            detail: detail.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
