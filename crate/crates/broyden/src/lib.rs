//! Dense nonlinear-equation solving with Newton's method and Broyden's
//! "good" and "bad" quasi-Newton schemes, plus a diagnostics layer that
//! measures convergence potentials along real trajectories and certifies
//! explicit superlinear rate envelopes against them.
//!
//! # Layout
//!
//! * [`linalg`] — column-major dense vectors/matrices, LU with partial
//!   pivoting, power-iteration spectral norm, rank-one and
//!   Sherman-Morrison updates.
//! * [`problems`] — the `F(x) = 0` contract and three instances: linear
//!   systems, the regularized log-sum-exp gradient, and the discretized
//!   Chandrasekhar H-equation; finite-difference cross-checks and
//!   Lipschitz-constant estimation.
//! * [`solvers`] — Newton plus the two Broyden schemes with full
//!   per-iteration traces and terminal breakdown/divergence statuses.
//! * [`diagnostics`] — potentials `r, λ, F, σ, τ`, the contraction factor
//!   `q_m`, certified bound curves, and step-wise inequality audits.
//! * [`harness`] — seeded experiment orchestration (`B₀ = s·J` sweeps,
//!   good-versus-bad comparisons) with deterministic CSV/JSON emission.
//!
//! # Example
//!
//! ```
//! use broyden::linalg::DenseVector;
//! use broyden::problems::{LogSumExpProblem, Problem};
//! use broyden::solvers::{broyden_good_solve, SolverConfig};
//!
//! let problem = LogSumExpProblem::generate(8, 16, 1.0, 42);
//! let x0 = DenseVector::from_fn(8, |i| 0.05 * (i as f64 + 1.0));
//! let b0 = problem.jacobian(&x0).unwrap();
//!
//! let trace = broyden_good_solve(&problem, &x0, &b0, &SolverConfig::default()).unwrap();
//! assert_eq!(trace.status, broyden::solvers::SolveStatus::Converged);
//! // The root of the generated instance is the origin.
//! assert!(trace.final_x.norm() < 1e-9);
//! ```
//!
//! The runnable programs under `examples/` walk through each capability;
//! the `broyden-lab` binary exposes `solve`, `compare`, `certify` and
//! `gen-problem` subcommands over the same machinery.

#![allow(clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod problems;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
