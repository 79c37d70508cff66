//! Crate-wide error type.
//!
//! Failures fall into three families, which the CLI maps to exit codes:
//! malformed input (2), shape mismatches (3), and numerical failures (4).
//! Solver non-convergence is never an error; it is reported through
//! `converged = false` on the fit result.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- tree structure ----
    #[error("empty tree input")]
    EmptyInput,
    #[error("tree has a cycle through node `{0}`")]
    CycleDetected(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(String),
    #[error("node `{node}` names unknown parent `{parent}`")]
    DanglingParent { node: String, parent: String },
    #[error("feature column {0} is mapped by more than one leaf")]
    DuplicateLeafColumn(usize),
    #[error("feature column {0} is not mapped by any leaf")]
    MissingLeafColumn(usize),
    #[error("leaf `{0}` declares no feature column")]
    LeafWithoutColumn(String),
    #[error("internal node `{0}` declares a feature column")]
    ColumnOnInternalNode(String),
    #[error("malformed tree line {line}: {msg}")]
    TreeFormat { line: usize, msg: String },
    #[error("cannot delete root node `{0}`")]
    CannotDeleteRoot(String),
    #[error("cannot delete leaf node `{0}`")]
    CannotDeleteLeaf(String),
    #[error("need at least two internal nodes, found {0}")]
    TooFewInternalNodes(usize),

    // ---- shapes and values ----
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("penalty level must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("penalty weight on node `{node}` must be nonnegative, got {weight}")]
    NegativeWeight { node: String, weight: f64 },
    #[error("logistic loss needs a 0/1 response; row {row} has value {value}")]
    NonBinaryResponse { row: usize, value: f64 },
    #[error("fold count must satisfy 2 <= k <= n, got k={k} with n={n}")]
    FoldTooSmall { k: usize, n: usize },
    #[error("unknown tree variant `{0}`")]
    UnknownVariant(String),
    #[error("group sizes 3p/2K and p/2K are not integral for p={p}, K={k}")]
    IndivisibleSizes { p: usize, k: usize },
    #[error("fission flip probability must lie in (1/2, 1), got {0}")]
    DeltaOutOfRange(f64),
    #[error("value outside its valid range: {0}")]
    OutOfRange(f64),
    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFiniteValue {
        what: String,
        row: usize,
        col: usize,
    },

    // ---- numerics ----
    #[error("signal X·beta* is identically zero; cannot calibrate noise")]
    ZeroSignal,
    #[error("power iteration did not produce a finite spectral norm")]
    PowerIterationDiverged,
    #[error("logistic fit separated: coefficients diverged without converging")]
    Separation,

    // ---- files and serialization (CLI layer) ----
    #[error("{0}")]
    Usage(String),
    #[error("{path}:{line}: {msg}")]
    InputFormat {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code the CLI uses for this error family:
    /// 2 = input error, 3 = shape mismatch, 4 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            DimensionMismatch(_) | FoldTooSmall { .. } => 3,
            ZeroSignal | PowerIterationDiverged | Separation => 4,
            _ => 2,
        }
    }
}
