use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("reference model is not Hurwitz: eigenvalue {re} + {im}i has non-negative real part")]
    NotHurwitz { re: f64, im: f64 },
    #[error("invalid integrator or horizon setting: {0}")]
    InvalidConfig(String),
    #[error("state became non-finite after step {last_finite_step}")]
    NonFinite { last_finite_step: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("controller failed at step {step}: {message}")]
    Controller { step: usize, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BnnError {
    #[error("network shape error: {0}")]
    Shape(String),
    #[error("need at least {needed} Monte Carlo draws, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("training set has {have} points but batch size is {batch}")]
    NotEnoughData { have: usize, batch: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Q must be symmetric positive definite")]
    QNotPositiveDefinite,
    #[error("matching conditions violated: {0}")]
    Matching(String),
    #[error("non-finite input to the weight update")]
    NonFinite,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Diagnostics(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Bnn(#[from] BnnError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] IoError),
}
