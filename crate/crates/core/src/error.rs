use thiserror::Error;

/// Errors raised while building or analysing an LP circuit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("problem has no constraints")]
    NoConstraints,

    #[error("variable {0} does not appear in the cost or any constraint")]
    ZeroColumn(usize),

    #[error("constraint row {0} has no nonzero coefficient")]
    ZeroRow(usize),

    #[error("conductance matrix has a negative entry at ({row}, {col})")]
    NegativeConductance { row: usize, col: usize },

    #[error("equality constraints are inconsistent (residual {residual:.3e})")]
    InconsistentEqualities { residual: f64 },

    #[error("inequality constraints admit no solution")]
    Infeasible,

    #[error("network is singular: {0}")]
    Singular(String),

    #[error("{assumption} violated: {detail}")]
    Assumption {
        assumption: &'static str,
        detail: String,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("size guard exceeded: {0}")]
    TooLarge(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("transient diverged at t = {time:.6e} s")]
    Diverged { time: f64 },

    #[error("random problem generation failed after {0} attempts")]
    Generation(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
