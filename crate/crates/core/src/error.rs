use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("observation has zero likelihood under the belief{}", .step.map(|i| format!(" at step {i}")).unwrap_or_default())]
    ZeroLikelihood { step: Option<usize> },
    #[error("specification has an empty target set: {0}")]
    EmptyTarget(String),
    #[error("cannot parse specification {0:?}")]
    SpecSyntax(String),
    #[error("undiscounted flow system is singular")]
    SingularFlow,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("linear program: {0}")]
    Lp(#[from] pomirl_lp::LpError),
    #[error("format: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
