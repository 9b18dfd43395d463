//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by linear algebra kernels, problem evaluations, solvers
/// and the experiment harness.
///
/// Run-time solver outcomes (breakdown, divergence, iteration cap) are *not*
/// errors; they are reported through [`crate::solvers::SolveStatus`]. This
/// type covers contract violations and unrecoverable setup failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// A pivot dropped below the relative threshold during LU factorization.
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    SingularMatrix { pivot: f64, column: usize },

    /// An iterative kernel exhausted its iteration budget.
    #[error("iteration failed to converge within {iterations} iterations")]
    ConvergenceFailure { iterations: usize },

    /// The Sherman-Morrison denominator vanished relative to its operands.
    #[error("rank-one inverse update denominator broke down ({value:e} against scale {scale:e})")]
    BreakdownDenominator { value: f64, scale: f64 },

    /// An H-equation bracket term is too close to zero to invert.
    #[error("pole encountered at component {index}: bracket magnitude {magnitude:e}")]
    PoleEncountered { index: usize, magnitude: f64 },

    /// The problem exposes no analytic Jacobian.
    #[error("analytic Jacobian is not available for this problem")]
    JacobianUnavailable,

    /// Newton refinement of the reference solution did not converge.
    #[error("no convergence while refining the reference solution (final residual {residual:e})")]
    NoConvergence { residual: f64 },

    /// The Jacobian at the candidate solution failed to factor.
    #[error("reference solution is degenerate: Jacobian at the root is singular")]
    DegenerateSolution,

    /// A diagnostics routine needs per-iteration Jacobian snapshots.
    #[error(
        "solve trace carries no approximate-Jacobian snapshots; rerun with diagnostics enabled"
    )]
    MissingSnapshots,

    /// A theorem's initial condition does not hold, so no bound curve exists.
    #[error("initial condition unmet: {detail}")]
    InitialConditionUnmet { detail: String },

    /// Banach-lemma check requires a contraction.
    #[error("operator norm {norm} is not below 1; the Neumann series does not converge")]
    NormTooLarge { norm: f64 },

    /// Invalid configuration or command-line input.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
