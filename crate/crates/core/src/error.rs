use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed linear program: {0}")]
    MalformedProgram(String),

    #[error("simplex iteration limit of {limit} reached")]
    IterationLimit { limit: usize },

    #[error("simplex returned a point violating the program by {violation:e}")]
    NumericalFailure { violation: f64 },

    #[error("linear program is infeasible: {0}")]
    InfeasibleProgram(String),

    #[error("linear program is unbounded")]
    UnboundedProgram,

    #[error("induced Markov chain is not ergodic: {0}")]
    NonErgodicChain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),

    #[error("invalid mixture: eps = {eps} exceeds delta = {delta}")]
    InvalidMixture { eps: f64, delta: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
