use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge ({tail}, {head}) has an endpoint outside 0..{n}")]
    EndpointOutOfRange { tail: usize, head: usize, n: usize },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("numeric overflow in {0}")]
    NumericOverflow(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("degenerate eigenvalue cluster around index {index} (gap {gap:e})")]
    DegenerateSpectrum { index: usize, gap: f64 },

    #[error("Gershgorin radius is zero but the spectral discrepancy is {0:e}")]
    ZeroRadius(f64),

    #[error("sparsified graph is not an edge subset of the original: {0}")]
    NotSubgraph(String),

    #[error("edge budget {budget} outside 0..={m}")]
    Budget { budget: usize, m: usize },

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("non-deterministic loss: repeated evaluation differs by {0:e}")]
    NonDeterministic(f64),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
