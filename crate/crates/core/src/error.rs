use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("LFT is singular (condition number {cond:.3e})")]
    SingularLft { cond: f64 },
    #[error("LFT is ill-posed on the scheduling set: {0}")]
    IllPosedLft(String),
    #[error("rank deficient: found rank {rank}, need {required}")]
    RankDeficient { rank: usize, required: usize },
    #[error("matrix is not symmetric (relative asymmetry {asym:.3e})")]
    NotSymmetric { asym: f64 },
    #[error("too many vertices: n_p = {n_p} exceeds cap {cap}")]
    TooManyVertices { n_p: usize, cap: usize },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("non-finite or overflowing state at step {step}")]
    NonFiniteState { step: usize },
    #[error("weight matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    WeightNotPsd { min_eig: f64 },
    #[error("Gram matrix of the shifted noisy states is singular")]
    SingularGram,
    #[error("data assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("P is ill-conditioned (condition number {cond:.3e}); try a trace box")]
    IllConditionedP { cond: f64 },
    #[error("closed loop is not Schur stable at p = {p:?}")]
    UnstableAtGridPoint { p: Vec<f64> },
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("problem is infeasible")]
    Infeasible,
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::DimMismatch(msg.into())
}
