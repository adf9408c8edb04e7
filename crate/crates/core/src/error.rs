use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid matrix entry {value} at ({row}, {col}): {reason}")]
    InvalidEntry {
        row: usize,
        col: usize,
        value: f64,
        reason: &'static str,
    },

    #[error("empty matrix ({rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("system is unstable: spectral radius {rho} >= 1")]
    Unstable { rho: f64 },

    #[error("I - A is singular")]
    Singular,

    #[error("Neumann series did not converge within {terms} terms")]
    NonConvergence {
        terms: usize,
        partial_sum: Box<DMatrix<f64>>,
    },

    #[error("direct-effect operator X*Theta2 has 1-norm {norm:e}; amplification ratio undefined")]
    DegenerateDirectEffect { norm: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite loss at iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error("correlation undefined: {0} has zero variance")]
    UndefinedCorrelation(&'static str),

    #[error("only {stable} of {requested} bootstrap replicates were stable; need at least 2")]
    InsufficientReplicates { stable: usize, requested: usize },

    #[error("no grid cell produced a stable fit in every fold")]
    NoFeasibleModel,

    /// `row` is the 1-based data row (header excluded); `None` when the
    /// problem concerns the whole column.
    #[error("{path}: {}column '{column}': {reason}", row.map(|r| format!("row {r}, ")).unwrap_or_default())]
    Data {
        path: String,
        row: Option<usize>,
        column: String,
        reason: String,
    },

    #[error("column spec: {0}")]
    ColumnSpec(String),

    #[error("artifact schema version '{found}' is not supported (expected '{expected}'); {hint}")]
    SchemaVersion {
        found: String,
        expected: &'static str,
        hint: &'static str,
    },

    #[error("malformed artifact: {0}")]
    MalformedArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
