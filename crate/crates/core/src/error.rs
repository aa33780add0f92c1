use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset has {n} rows, need at least 2")]
    EmptyDataset { n: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("eigensolver did not converge in {iterations} sweeps (worst residual {worst:.3e})")]
    Convergence {
        iterations: usize,
        worst: f64,
        residuals: Vec<f64>,
    },

    #[error("dense path limited to n <= {cap}, got n = {n}")]
    Size { n: usize, cap: usize },

    #[error("run with seed {seed} failed: {source}")]
    Run {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot open {}: {source}", path.display())]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
