//! Crate-wide error type.
//!
//! Variants map onto the CLI exit codes: config/data problems are user
//! errors (exit 2), checkpoint mismatches are artifact errors (exit 3),
//! and numerical aborts exit with 4.

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was called outside its contract (non-scalar loss,
    /// flow time outside [0,1], empty mask row, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad configuration: unknown key, unparsable value, invalid combination.
    #[error("config error: {0}")]
    Config(String),

    /// Bad or inconsistent input data (episodes, task specs, reports).
    #[error("data error: {0}")]
    Data(String),

    /// A checkpoint does not match the configuration it is loaded against.
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    /// Non-finite values where finite ones are required.
    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error, per the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Data(_) | Error::Io(_) => 2,
            Error::Checkpoint(_) => 3,
            Error::Numerical(_) => 4,
            Error::Shape(_) | Error::Contract(_) => 1,
        }
    }
}
