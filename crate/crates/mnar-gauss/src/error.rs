//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by estimators, auditors and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix expected to be symmetric positive definite failed factorization.
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row}, floor {floor:.3e})")]
    NotPositiveDefinite { row: usize, pivot: f64, floor: f64 },

    /// A principal block of the covariance could not be factored while conditioning.
    #[error("singular covariance block over coordinates {context}")]
    SingularBlock { context: String },

    /// Dimension or length mismatch between inputs.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Invalid parameter value outside its documented domain.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// `beta * d` must be a positive integer.
    #[error("invalid beta {beta}: beta*d = {beta_d} is not a positive integer")]
    InvalidBeta { beta: f64, beta_d: f64 },

    /// Rejection sampling exhausted its attempt budget; the truncation set has
    /// too little mass under the current parameters.
    #[error("truncation set mass below floor: {attempts} rejection attempts exhausted")]
    MassTooLow { attempts: u64 },

    /// The SGD iterates were still moving at the end of the budget.
    #[error("estimator did not settle: movement {movement:.3e} over final iterations exceeds {tol:.3e}")]
    NonConvergent { movement: f64, tol: f64 },

    /// A coordinate pair was observed together in too few samples (Assumption
    /// failure at this sample size). `i == j` means coordinate `i` itself.
    #[error("pair ({i},{j}) observed together in only {got} samples, need {need}")]
    PairStarved { i: usize, j: usize, got: usize, need: usize },

    /// An initialization block had no fully observed rows.
    #[error("block {block} (coords {lo}..{hi}) has no fully observed rows")]
    BlockStarved { block: usize, lo: usize, hi: usize },

    /// An anchoring coordinate was missing from some sample.
    #[error("anchor violated: coordinate {coord} missing in draw {draw}")]
    AnchorViolated { coord: usize, draw: usize },

    /// No interior point of the Langevin feasible set could be found.
    #[error("empty feasible set for pattern {pattern:?}")]
    EmptyFeasible { pattern: Vec<usize> },

    /// Dykstra's projection did not converge within the sweep cap.
    #[error("projection did not converge after {sweeps} sweeps (movement {movement:.3e})")]
    NoConvergence { sweeps: usize, movement: f64 },

    /// The observation stream ended before the estimator's budget was met.
    #[error("observation stream supplied {got} samples, need {need}")]
    InsufficientStream { got: usize, need: usize },

    /// The quadrature grid misses too much Gaussian mass.
    #[error("quadrature grid covers mass {mass:.12}, deficit exceeds {max_deficit:.1e}")]
    GridTooCoarse { mass: f64, max_deficit: f64 },

    /// Config or data file failed schema validation.
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 2 schema, 3 assumption violation,
    /// 4 non-convergence, 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema { .. } | Error::InvalidBeta { .. } | Error::InvalidParameter { .. } => 2,
            Error::PairStarved { .. } | Error::BlockStarved { .. } | Error::AnchorViolated { .. } => 3,
            Error::MassTooLow { .. } => 3,
            Error::NonConvergent { .. } | Error::NoConvergence { .. } => 4,
            _ => 1,
        }
    }

    /// Short remediation hint rendered by the CLI next to the error.
    pub fn hint(&self) -> Option<&'static str> {
        match self {
            Error::PairStarved { .. } => {
                Some("increase n or check the pairwise observation assumption for this model")
            }
            Error::BlockStarved { .. } => {
                Some("increase M_init or check the subset observation assumption (beta too large?)")
            }
            Error::MassTooLow { .. } => {
                Some("the truncation set has nearly no mass; the pairwise assumption is violated")
            }
            Error::AnchorViolated { .. } => {
                Some("the configured anchor set is not always observed under this model")
            }
            Error::NonConvergent { .. } => Some("increase the step budget or sample count"),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
