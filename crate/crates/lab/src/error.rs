use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] dln_core::Error),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("run diverged at step {0}")]
    Diverged(usize),
}

impl LabError {
    pub fn usage(msg: impl Into<String>) -> Self {
        LabError::Usage(msg.into())
    }

    /// 1 check failure, 2 usage or I/O error, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Usage(_) => 2,
            LabError::Core(dln_core::Error::Numerical(_)) => 1,
            LabError::Core(_) => 2,
            LabError::CheckFailed(_) => 1,
            LabError::Diverged(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
