use thiserror::Error;

/// Errors produced by estimation, learning, simulation and bound evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("arm empty: no observations with a = {arm}")]
    ArmEmpty { arm: u8 },

    #[error("cannot fit learner: arm empty in training split")]
    TrainingArmEmpty,

    #[error("predictor produced nonfinite value")]
    NonfiniteValue,

    #[error("singular design")]
    SingularDesign,

    #[error("learner failed: {0}")]
    LearnerFailed(String),

    #[error("identity requires exchangeable splitting")]
    UnequalFolds,

    #[error("guard 2Mδ > E‖ΔQ‖ violated")]
    SubgaussianGuard,

    #[error("scenario failed: {0}")]
    Scenario(String),

    #[error("{context}: {message}")]
    Io { context: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
