//! Nonlinear-system contract and concrete test problems.
//!
//! A [`Problem`] evaluates the residual map `F(x)` and, when available, its
//! analytic Jacobian `J(x)`. Three instances are provided:
//!
//! * [`LinearSystem`] — `F(x) = A x - b`, the warm-up case every solver
//!   must finish in one step when started from the exact Jacobian;
//! * [`LogSumExpProblem`] — the gradient of a regularized log-sum-exp
//!   objective, generated so the root sits exactly at the origin;
//! * [`ChandrasekharProblem`] — the H-equation discretized with the
//!   composite midpoint rule.
//!
//! A central-difference Jacobian ([`finite_difference_jacobian`]) serves as
//! the cross-check oracle for the analytic derivatives, and
//! [`estimate_lipschitz_m`] samples the Jacobian's Lipschitz constant with
//! respect to the root, which the rate diagnostics need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lu_factor, spectral_norm, DenseMatrix, DenseVector};
use crate::rng::SplitMix64;

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Bracket magnitudes below this are treated as poles of the H-equation.
const POLE_TOL: f64 = 1e-14;

/// A square system of nonlinear equations `F(x) = 0`.
pub trait Problem {
    fn dim(&self) -> usize;

    /// Evaluates `F(x)`.
    fn residual(&self, x: &DenseVector) -> Result<DenseVector>;

    /// Evaluates the analytic Jacobian `J(x)`, when the problem has one.
    fn jacobian(&self, _x: &DenseVector) -> Result<DenseMatrix> {
        Err(Error::JacobianUnavailable)
    }

    fn has_jacobian(&self) -> bool {
        false
    }

    /// Known Lipschitz constant of `J` with respect to the root, if any.
    fn lipschitz_constant(&self) -> Option<f64> {
        None
    }
}

// ── Linear system ───────────────────────────────────────────────────

/// `F(x) = A x - b` with a nonsingular `A`; the Jacobian is constant.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: DenseMatrix,
    b: DenseVector,
    seed: u64,
}

impl LinearSystem {
    /// Builds the system, verifying that `A` is square, matches `b`, and
    /// factors without a pivot failure.
    pub fn new(a: DenseMatrix, b: DenseVector) -> Result<Self> {
        if !a.is_square() || a.rows() != b.dim() {
            return Err(Error::DimensionMismatch {
                context: "LinearSystem",
                expected: a.rows(),
                found: b.dim(),
            });
        }
        lu_factor(&a)?;
        Ok(Self { a, b, seed: 0 })
    }

    /// A seeded random instance with a diagonally dominant `A`, so the
    /// condition number stays moderate across seeds.
    pub fn generate(dim: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut a = DenseMatrix::from_fn(dim, dim, |_, _| rng.uniform_symmetric());
        for i in 0..dim {
            let v = a.get(i, i) + 1.5 + dim as f64 * 0.25;
            a.set(i, i, v);
        }
        let b = DenseVector::from_fn(dim, |_| rng.uniform_symmetric());
        Self { a, b, seed }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn rhs(&self) -> &DenseVector {
        &self.b
    }
}

impl Problem for LinearSystem {
    fn dim(&self) -> usize {
        self.b.dim()
    }

    fn residual(&self, x: &DenseVector) -> Result<DenseVector> {
        check_dim("LinearSystem::residual", self.dim(), x)?;
        Ok(self.a.matvec(x).sub(&self.b))
    }

    fn jacobian(&self, x: &DenseVector) -> Result<DenseMatrix> {
        check_dim("LinearSystem::jacobian", self.dim(), x)?;
        Ok(self.a.clone())
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn lipschitz_constant(&self) -> Option<f64> {
        Some(0.0)
    }
}

// ── Regularized log-sum-exp ─────────────────────────────────────────

/// Gradient system of
/// `f(x) = ln Σ_j exp(c_jᵀx - b_j) + ½ Σ_j (c_jᵀx)² + γ/2 ‖x‖²`.
///
/// The residual is `F(x) = ∇f(x)` and the Jacobian is the Hessian
/// `Σ_j (π_j(x)+1) c_j c_jᵀ - g(x) g(x)ᵀ + γ I`, which is symmetric
/// positive definite for `γ > 0`. Softmax weights are evaluated with the
/// usual max-shift so large arguments cannot overflow.
#[derive(Debug, Clone)]
pub struct LogSumExpProblem {
    /// Columns are the coefficient vectors `c_j` (n × m).
    c: DenseMatrix,
    /// Offsets `b_j`.
    b: DenseVector,
    gamma: f64,
    seed: u64,
}

impl LogSumExpProblem {
    pub fn new(c: DenseMatrix, b: DenseVector, gamma: f64) -> Result<Self> {
        if c.cols() != b.dim() {
            return Err(Error::DimensionMismatch {
                context: "LogSumExpProblem",
                expected: c.cols(),
                found: b.dim(),
            });
        }
        if gamma <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "log-sum-exp regularization must be positive, got {gamma}"
            )));
        }
        Ok(Self {
            c,
            b,
            gamma,
            seed: 0,
        })
    }

    /// Synthesizes an instance whose root is exactly the origin: raw
    /// coefficients and offsets are drawn uniformly from `[-1, 1]`, then
    /// every column is shifted by the raw softmax mean so that `F(0) = 0`.
    pub fn generate(n: usize, m: usize, gamma: f64, seed: u64) -> Self {
        assert!(n >= 1 && m >= 1);
        let mut rng = SplitMix64::new(seed);
        let mut raw = Vec::with_capacity(n * m);
        for _ in 0..n * m {
            raw.push(rng.uniform_symmetric());
        }
        let c_hat = DenseMatrix::from_col_major(n, m, raw);
        let b = DenseVector::from_fn(m, |_| rng.uniform_symmetric());

        // Softmax of the raw instance at x = 0 (arguments are -b_j).
        let pi0 = softmax(&b.scale(-1.0));
        let shift = c_hat.matvec(&pi0);
        let c = DenseMatrix::from_fn(n, m, |i, j| c_hat.get(i, j) - shift[i]);

        let mut p = Self::new(c, b, gamma).expect("generated instance is well-formed");
        p.seed = seed;
        p
    }

    pub fn coefficients(&self) -> &DenseMatrix {
        &self.c
    }

    pub fn offsets(&self) -> &DenseVector {
        &self.b
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn terms(&self) -> usize {
        self.c.cols()
    }

    fn weights(&self, x: &DenseVector) -> DenseVector {
        softmax(&self.c.tr_matvec(x).sub(&self.b))
    }

    /// The scalar objective whose gradient this problem solves for; kept
    /// public so derivative checks can difference it directly.
    pub fn objective(&self, x: &DenseVector) -> f64 {
        let t = self.c.tr_matvec(x).sub(&self.b);
        let max = t
            .as_slice()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + t.as_slice()
                .iter()
                .map(|v| (v - max).exp())
                .sum::<f64>()
                .ln();
        let ctx = self.c.tr_matvec(x);
        lse + 0.5 * ctx.dot(&ctx) + 0.5 * self.gamma * x.dot(x)
    }
}

fn softmax(t: &DenseVector) -> DenseVector {
    let max = t
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = t.as_slice().iter().map(|v| (v - max).exp()).collect();
    let z: f64 = w.iter().sum();
    DenseVector::from_raw(w.into_iter().map(|v| v / z).collect())
}

impl Problem for LogSumExpProblem {
    fn dim(&self) -> usize {
        self.c.rows()
    }

    fn residual(&self, x: &DenseVector) -> Result<DenseVector> {
        check_dim("LogSumExpProblem::residual", self.dim(), x)?;
        let pi = self.weights(x);
        let g = self.c.matvec(&pi);
        let quad = self.c.matvec(&self.c.tr_matvec(x));
        Ok(g.add(&quad).add(&x.scale(self.gamma)))
    }

    fn jacobian(&self, x: &DenseVector) -> Result<DenseMatrix> {
        check_dim("LogSumExpProblem::jacobian", self.dim(), x)?;
        let n = self.dim();
        let pi = self.weights(x);
        let g = self.c.matvec(&pi);
        // C diag(π + 1) Cᵀ accumulated column by column.
        let mut j = DenseMatrix::zeros(n, n);
        for col in 0..self.terms() {
            let w = pi[col] + 1.0;
            let cj = self.c.col(col);
            for q in 0..n {
                let s = w * cj[q];
                if s == 0.0 {
                    continue;
                }
                for p in 0..n {
                    let v = j.get(p, q) + cj[p] * s;
                    j.set(p, q, v);
                }
            }
        }
        for q in 0..n {
            for p in 0..n {
                let mut v = j.get(p, q) - g[p] * g[q];
                if p == q {
                    v += self.gamma;
                }
                j.set(p, q, v);
            }
        }
        Ok(j)
    }

    fn has_jacobian(&self) -> bool {
        true
    }
}

// ── Chandrasekhar H-equation ────────────────────────────────────────

/// Composite-midpoint discretization of the H-equation
/// `H(μ) = (1 - c/2 ∫ μ H(ν) dν / (μ+ν))⁻¹` on `N` nodes
/// `μ_i = (i - 1/2)/N`:
///
/// `F_i(x) = x_i - (1 - c/(2N) Σ_j μ_i x_j / (μ_i + μ_j))⁻¹`.
#[derive(Debug, Clone)]
pub struct ChandrasekharProblem {
    c: f64,
    n: usize,
    mu: Vec<f64>,
}

impl ChandrasekharProblem {
    pub fn new(c: f64, n: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&c) {
            return Err(Error::InvalidConfig(format!(
                "H-equation parameter must lie in [0, 1), got {c}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidConfig(
                "H-equation needs at least one node".into(),
            ));
        }
        let mu = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        Ok(Self { c, n, mu })
    }

    pub fn parameter(&self) -> f64 {
        self.c
    }

    pub fn nodes(&self) -> &[f64] {
        &self.mu
    }

    /// The midpoint-rule brackets `1 - c/(2N) Σ_j μ_i x_j / (μ_i + μ_j)`.
    fn brackets(&self, x: &DenseVector) -> Result<Vec<f64>> {
        let scale = self.c / (2.0 * self.n as f64);
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for j in 0..self.n {
                acc += self.mu[i] * x[j] / (self.mu[i] + self.mu[j]);
            }
            let bracket = 1.0 - scale * acc;
            if bracket.abs() < POLE_TOL || !bracket.is_finite() {
                return Err(Error::PoleEncountered {
                    index: i,
                    magnitude: bracket.abs(),
                });
            }
            out.push(bracket);
        }
        Ok(out)
    }
}

impl Problem for ChandrasekharProblem {
    fn dim(&self) -> usize {
        self.n
    }

    fn residual(&self, x: &DenseVector) -> Result<DenseVector> {
        check_dim("ChandrasekharProblem::residual", self.n, x)?;
        let brackets = self.brackets(x)?;
        Ok(DenseVector::from_raw(
            (0..self.n).map(|i| x[i] - 1.0 / brackets[i]).collect(),
        ))
    }

    fn jacobian(&self, x: &DenseVector) -> Result<DenseMatrix> {
        check_dim("ChandrasekharProblem::jacobian", self.n, x)?;
        let brackets = self.brackets(x)?;
        let scale = self.c / (2.0 * self.n as f64);
        let mut j = DenseMatrix::zeros(self.n, self.n);
        for k in 0..self.n {
            for i in 0..self.n {
                let mut v =
                    -scale * self.mu[i] / (self.mu[i] + self.mu[k]) / (brackets[i] * brackets[i]);
                if i == k {
                    v += 1.0;
                }
                j.set(i, k, v);
            }
        }
        Ok(j)
    }

    fn has_jacobian(&self) -> bool {
        true
    }
}

// ── Cross-check oracle & Lipschitz estimation ───────────────────────

fn check_dim(context: &'static str, expected: usize, x: &DenseVector) -> Result<()> {
    if x.dim() != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found: x.dim(),
        });
    }
    Ok(())
}

/// Central-difference Jacobian of an arbitrary map, column by column:
/// `(F(x + h e_j) - F(x - h e_j)) / (2h)`.
pub fn finite_difference_jacobian<F>(f: F, x: &DenseVector, h: f64) -> Result<DenseMatrix>
where
    F: Fn(&DenseVector) -> Result<DenseVector>,
{
    assert!(h > 0.0, "step must be positive");
    let n = x.dim();
    let f0 = f(x)?;
    let rows = f0.dim();
    let mut out = DenseMatrix::zeros(rows, n);
    for j in 0..n {
        let e = DenseVector::unit(n, j).scale(h);
        let plus = f(&x.add(&e))?;
        let minus = f(&x.sub(&e))?;
        for i in 0..rows {
            out.set(i, j, (plus[i] - minus[i]) / (2.0 * h));
        }
    }
    Ok(out)
}

/// Convenience wrapper differencing a problem's residual.
pub fn fd_jacobian(p: &dyn Problem, x: &DenseVector, h: f64) -> Result<DenseMatrix> {
    finite_difference_jacobian(|x| p.residual(x), x, h)
}

/// Samples `‖J(x) - J(x_*)‖ / ‖x - x_*‖` over a ball around the root and
/// returns the maximum inflated by a safety factor of 1.5.
///
/// Directions are uniform on the sphere; radii are uniform in `(0, R]`
/// rather than volume-uniform, so small radii — where the ratio peaks for
/// saturating Jacobians — are represented even in high dimension. The
/// result is an empirical stand-in for the Lipschitz constant of the
/// Jacobian with respect to the root; every certificate records whether it
/// used a provided or an estimated value.
pub fn estimate_lipschitz_m(
    p: &dyn Problem,
    x_star: &DenseVector,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    assert!(radius > 0.0, "sampling radius must be positive");
    let j_star = p.jacobian(x_star)?;
    let dim = p.dim();
    let mut worst = 0.0f64;
    let mut probe = |dir: &DenseVector, r: f64| -> Result<()> {
        let x = x_star.add(&dir.scale(r));
        let j = p.jacobian(&x)?;
        let ratio = spectral_norm(&j.sub(&j_star))? / r;
        worst = worst.max(ratio);
        Ok(())
    };

    // Structured probes first: random directions concentrate away from
    // axis-aligned extremes in high dimension, so the diagonal and basis
    // directions are always visited explicitly, at several radii.
    let diag = DenseVector::ones(dim).scale(1.0 / (dim as f64).sqrt());
    for scale in [1.0, 0.5, 0.25, 0.125] {
        probe(&diag, radius * scale)?;
        probe(&diag.scale(-1.0), radius * scale)?;
    }
    if dim <= 32 {
        for i in 0..dim {
            probe(&DenseVector::unit(dim, i), radius)?;
            probe(&DenseVector::unit(dim, i).scale(-1.0), radius)?;
        }
    }

    let mut rng = SplitMix64::new(seed);
    for _ in 0..samples {
        let mut dir = DenseVector::from_raw((0..dim).map(|_| rng.standard_normal()).collect());
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        dir = dir.scale(1.0 / norm);
        let r = radius * rng.next_f64();
        if r == 0.0 {
            continue;
        }
        probe(&dir, r)?;
    }
    Ok(1.5 * worst)
}

// ── Serialization ───────────────────────────────────────────────────

/// Owned problem value used by the harness and the JSON round trip.
#[derive(Debug, Clone)]
pub enum ProblemInstance {
    Linear(LinearSystem),
    LogSumExp(LogSumExpProblem),
    Chandrasekhar(ChandrasekharProblem),
}

impl ProblemInstance {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemInstance::Linear(_) => "linear",
            ProblemInstance::LogSumExp(_) => "logsumexp",
            ProblemInstance::Chandrasekhar(_) => "chandrasekhar",
        }
    }

    pub fn to_json(&self) -> ProblemJson {
        match self {
            ProblemInstance::Linear(p) => ProblemJson {
                kind: "linear".into(),
                dim: p.dim(),
                seed: p.seed,
                payload: ProblemPayload {
                    a: Some(p.a.data().to_vec()),
                    b: Some(p.b.to_vec()),
                    ..Default::default()
                },
            },
            ProblemInstance::LogSumExp(p) => ProblemJson {
                kind: "logsumexp".into(),
                dim: p.dim(),
                seed: p.seed,
                payload: ProblemPayload {
                    gamma: Some(p.gamma),
                    m: Some(p.terms()),
                    c_cols: Some(p.c.data().to_vec()),
                    b: Some(p.b.to_vec()),
                    ..Default::default()
                },
            },
            ProblemInstance::Chandrasekhar(p) => ProblemJson {
                kind: "chandrasekhar".into(),
                dim: p.dim(),
                seed: 0,
                payload: ProblemPayload {
                    c: Some(p.c),
                    ..Default::default()
                },
            },
        }
    }

    pub fn from_json(doc: &ProblemJson) -> Result<Self> {
        let missing = |field: &str| {
            Error::InvalidConfig(format!("problem document missing payload field `{field}`"))
        };
        match doc.kind.as_str() {
            "linear" => {
                let a = doc.payload.a.as_ref().ok_or_else(|| missing("a"))?;
                let b = doc.payload.b.as_ref().ok_or_else(|| missing("b"))?;
                let a = DenseMatrix::from_col_major(doc.dim, doc.dim, a.clone());
                let mut p = LinearSystem::new(a, DenseVector::from_vec(b.clone()))?;
                p.seed = doc.seed;
                Ok(ProblemInstance::Linear(p))
            }
            "logsumexp" => {
                let gamma = doc.payload.gamma.ok_or_else(|| missing("gamma"))?;
                let m = doc.payload.m.ok_or_else(|| missing("m"))?;
                let c = doc
                    .payload
                    .c_cols
                    .as_ref()
                    .ok_or_else(|| missing("c_cols"))?;
                let b = doc.payload.b.as_ref().ok_or_else(|| missing("b"))?;
                let c = DenseMatrix::from_col_major(doc.dim, m, c.clone());
                let mut p = LogSumExpProblem::new(c, DenseVector::from_vec(b.clone()), gamma)?;
                p.seed = doc.seed;
                Ok(ProblemInstance::LogSumExp(p))
            }
            "chandrasekhar" => {
                let c = doc.payload.c.ok_or_else(|| missing("c"))?;
                Ok(ProblemInstance::Chandrasekhar(ChandrasekharProblem::new(
                    c, doc.dim,
                )?))
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown problem kind `{other}`"
            ))),
        }
    }
}

impl Problem for ProblemInstance {
    fn dim(&self) -> usize {
        match self {
            ProblemInstance::Linear(p) => p.dim(),
            ProblemInstance::LogSumExp(p) => p.dim(),
            ProblemInstance::Chandrasekhar(p) => p.dim(),
        }
    }

    fn residual(&self, x: &DenseVector) -> Result<DenseVector> {
        match self {
            ProblemInstance::Linear(p) => p.residual(x),
            ProblemInstance::LogSumExp(p) => p.residual(x),
            ProblemInstance::Chandrasekhar(p) => p.residual(x),
        }
    }

    fn jacobian(&self, x: &DenseVector) -> Result<DenseMatrix> {
        match self {
            ProblemInstance::Linear(p) => p.jacobian(x),
            ProblemInstance::LogSumExp(p) => p.jacobian(x),
            ProblemInstance::Chandrasekhar(p) => p.jacobian(x),
        }
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn lipschitz_constant(&self) -> Option<f64> {
        match self {
            ProblemInstance::Linear(_) => Some(0.0),
            _ => None,
        }
    }
}

/// On-disk document for a problem instance:
/// `{kind, dim, seed, payload arrays}`. Serialization is byte-stable for a
/// given instance, so regenerating from the same seed reproduces the file
/// exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemJson {
    pub kind: String,
    pub dim: usize,
    pub seed: u64,
    pub payload: ProblemPayload,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProblemPayload {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Log-sum-exp coefficient matrix, column-major `dim × m`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_cols: Option<Vec<f64>>,
    /// Offsets (log-sum-exp) or right-hand side (linear).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    /// Linear system matrix, column-major `dim × dim`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    /// H-equation parameter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_norm;

    fn random_point(dim: usize, seed: u64, scale: f64) -> DenseVector {
        let mut rng = SplitMix64::new(seed);
        DenseVector::from_fn(dim, |_| scale * rng.uniform_symmetric())
    }

    #[test]
    fn logsumexp_root_is_origin_for_all_seeds() {
        for seed in [0u64, 1, 7, 42, 999, 123456] {
            let p = LogSumExpProblem::generate(6, 11, 1.0, seed);
            let f0 = p.residual(&DenseVector::zeros(6)).unwrap();
            assert!(f0.norm() <= 1e-12, "seed {seed}: |F(0)| = {}", f0.norm());
        }
    }

    #[test]
    fn logsumexp_single_term_reduces_to_gamma_x() {
        let p = LogSumExpProblem::generate(4, 1, 0.7, 5);
        // With one softmax term the shifted coefficient column vanishes.
        assert!(frobenius_norm(p.coefficients()) <= 1e-15);
        let x = random_point(4, 8, 2.0);
        let f = p.residual(&x).unwrap();
        assert!(f.sub(&x.scale(0.7)).norm() <= 1e-14);
        let j = p.jacobian(&DenseVector::zeros(4)).unwrap();
        assert!(frobenius_norm(&j.sub(&DenseMatrix::identity(4).scale(0.7))) <= 1e-15);
    }

    #[test]
    fn logsumexp_generation_is_deterministic() {
        let a = LogSumExpProblem::generate(5, 9, 0.3, 2024);
        let b = LogSumExpProblem::generate(5, 9, 0.3, 2024);
        assert_eq!(a.coefficients().data(), b.coefficients().data());
        assert_eq!(a.offsets().as_slice(), b.offsets().as_slice());
        let ja = serde_json::to_string(&ProblemInstance::LogSumExp(a).to_json()).unwrap();
        let jb = serde_json::to_string(&ProblemInstance::LogSumExp(b).to_json()).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn logsumexp_zero_coefficients_give_gamma_x() {
        let p = LogSumExpProblem::new(
            DenseMatrix::zeros(3, 4),
            DenseVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]),
            2.5,
        )
        .unwrap();
        let x = random_point(3, 3, 1.0);
        assert!(p.residual(&x).unwrap().sub(&x.scale(2.5)).norm() <= 1e-14);
        let j = p.jacobian(&x).unwrap();
        assert!(frobenius_norm(&j.sub(&DenseMatrix::identity(3).scale(2.5))) <= 1e-14);
    }

    #[test]
    fn logsumexp_gradient_matches_objective_differences() {
        let p = LogSumExpProblem::generate(4, 4, 0.9, 17);
        let x = random_point(4, 31, 0.8);
        let f = p.residual(&x).unwrap();
        let h = FD_STEP;
        for i in 0..4 {
            let e = DenseVector::unit(4, i).scale(h);
            let fd = (p.objective(&x.add(&e)) - p.objective(&x.sub(&e))) / (2.0 * h);
            assert!(
                (f[i] - fd).abs() <= 1e-5,
                "component {i}: analytic {} vs fd {}",
                f[i],
                fd
            );
        }
    }

    #[test]
    fn logsumexp_hessian_matches_fd_jacobian() {
        let p = LogSumExpProblem::generate(5, 8, 0.5, 23);
        let x = random_point(5, 57, 0.6);
        let j = p.jacobian(&x).unwrap();
        let fd = fd_jacobian(&p, &x, FD_STEP).unwrap();
        assert!(frobenius_norm(&j.sub(&fd)) <= 1e-4);
    }

    #[test]
    fn logsumexp_large_arguments_do_not_overflow() {
        let p = LogSumExpProblem::generate(4, 6, 1.0, 3);
        let x = DenseVector::ones(4).scale(500.0);
        let f = p.residual(&x).unwrap();
        assert!(f.is_finite());
    }

    #[test]
    fn logsumexp_hessian_is_symmetric_positive_definite() {
        let p = LogSumExpProblem::generate(6, 10, 1e-8, 77);
        for s in 0..50 {
            let x = random_point(6, 100 + s, 1.5);
            let j = p.jacobian(&x).unwrap();
            for a in 0..6 {
                for b in 0..6 {
                    assert!((j.get(a, b) - j.get(b, a)).abs() <= 1e-12);
                }
            }
            lu_factor(&j).unwrap();
            let v = random_point(6, 200 + s, 1.0);
            assert!(v.dot(&j.matvec(&v)) > 0.0);
        }
    }

    #[test]
    fn chandrasekhar_zero_albedo_is_shifted_identity() {
        let p = ChandrasekharProblem::new(0.0, 5).unwrap();
        let x = random_point(5, 4, 3.0);
        let f = p.residual(&x).unwrap();
        let want = x.sub(&DenseVector::ones(5));
        assert_eq!(f.as_slice(), want.as_slice());
        assert_eq!(
            p.residual(&DenseVector::ones(5)).unwrap().as_slice(),
            DenseVector::zeros(5).as_slice()
        );
        let j = p.jacobian(&x).unwrap();
        assert_eq!(j, DenseMatrix::identity(5));
    }

    #[test]
    fn chandrasekhar_matches_independent_scalar_script() {
        // Straight 1-based transliteration of the midpoint formulas, kept
        // free of the production code paths.
        let c = 0.5;
        let n = 2usize;
        let x = [1.0, 1.0];
        let mut expected = Vec::new();
        for i in 1..=n {
            let mu_i = (i as f64 - 0.5) / n as f64;
            let mut sum = 0.0;
            for j in 1..=n {
                let mu_j = (j as f64 - 0.5) / n as f64;
                sum += mu_i * x[j - 1] / (mu_i + mu_j);
            }
            let bracket = 1.0 - c / (2.0 * n as f64) * sum;
            expected.push(x[i - 1] - 1.0 / bracket);
        }

        let p = ChandrasekharProblem::new(c, n).unwrap();
        let f = p.residual(&DenseVector::ones(2)).unwrap();
        for i in 0..n {
            assert!(
                (f[i] - expected[i]).abs() <= 1e-15,
                "component {i}: {} vs script {}",
                f[i],
                expected[i]
            );
        }
    }

    #[test]
    fn chandrasekhar_jacobian_matches_fd() {
        let p = ChandrasekharProblem::new(0.9, 7).unwrap();
        let x = DenseVector::ones(7).add(&random_point(7, 13, 0.1));
        let j = p.jacobian(&x).unwrap();
        let fd = fd_jacobian(&p, &x, FD_STEP).unwrap();
        assert!(frobenius_norm(&j.sub(&fd)) <= 1e-5);
    }

    #[test]
    fn chandrasekhar_single_node_scalar_derivative() {
        // N = 1: F(x) = x - (1 - c x / 4)^{-1}, so
        // F'(x) = 1 - (c/4)(1 - c x / 4)^{-2}.
        let c = 0.7;
        let p = ChandrasekharProblem::new(c, 1).unwrap();
        let x = DenseVector::from_vec(vec![1.3]);
        let j = p.jacobian(&x).unwrap();
        let bracket: f64 = 1.0 - c * 1.3 / 4.0;
        let want = 1.0 - (c / 4.0) / (bracket * bracket);
        assert!((j.get(0, 0) - want).abs() <= 1e-15);
    }

    #[test]
    fn chandrasekhar_reports_pole() {
        // One node: bracket vanishes at x = 4/c.
        let c = 0.5;
        let p = ChandrasekharProblem::new(c, 1).unwrap();
        match p.residual(&DenseVector::from_vec(vec![4.0 / c])) {
            Err(Error::PoleEncountered { index: 0, .. }) => {}
            other => panic!("expected PoleEncountered, got {other:?}"),
        }
    }

    #[test]
    fn fd_jacobian_exact_on_identity_and_affine() {
        let x = random_point(4, 6, 1.0);
        let id = finite_difference_jacobian(|v| Ok(v.clone()), &x, FD_STEP).unwrap();
        assert!(frobenius_norm(&id.sub(&DenseMatrix::identity(4))) <= 1e-9);

        let lin = LinearSystem::generate(4, 99);
        let fd = fd_jacobian(&lin, &x, FD_STEP).unwrap();
        assert!(frobenius_norm(&fd.sub(lin.matrix())) <= 1e-8);
    }

    #[test]
    fn fd_agrees_with_analytic_at_many_points() {
        let problems: Vec<ProblemInstance> = vec![
            ProblemInstance::Linear(LinearSystem::generate(5, 1)),
            ProblemInstance::LogSumExp(LogSumExpProblem::generate(5, 7, 0.8, 2)),
            ProblemInstance::Chandrasekhar(ChandrasekharProblem::new(0.8, 5).unwrap()),
        ];
        for p in &problems {
            for s in 0..20 {
                let base = if matches!(p, ProblemInstance::Chandrasekhar(_)) {
                    DenseVector::ones(p.dim())
                } else {
                    DenseVector::zeros(p.dim())
                };
                let x = base.add(&random_point(p.dim(), 500 + s, 0.3));
                let j = p.jacobian(&x).unwrap();
                let fd = fd_jacobian(p, &x, FD_STEP).unwrap();
                let scale = frobenius_norm(&j).max(1.0);
                assert!(
                    frobenius_norm(&j.sub(&fd)) <= 1e-4 * scale,
                    "{} diverges from finite differences",
                    p.kind()
                );
            }
        }
    }

    #[test]
    fn lipschitz_estimate_is_zero_for_linear() {
        let p = LinearSystem::generate(4, 11);
        let x_star = DenseVector::zeros(4);
        let m = estimate_lipschitz_m(&p, &x_star, 1.0, 100, 5).unwrap();
        assert_eq!(m, 0.0);
    }

    /// One-dimensional `F(x) = x²` with root at zero: the ratio
    /// `|J(x) - J(0)| / |x|` equals 2 everywhere, so the inflated estimate
    /// must be exactly 3.
    struct Square;
    impl Problem for Square {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, x: &DenseVector) -> Result<DenseVector> {
            Ok(DenseVector::from_raw(vec![x[0] * x[0]]))
        }
        fn jacobian(&self, x: &DenseVector) -> Result<DenseMatrix> {
            Ok(DenseMatrix::from_row_major(1, 1, &[2.0 * x[0]]))
        }
        fn has_jacobian(&self) -> bool {
            true
        }
    }

    #[test]
    fn lipschitz_estimate_exact_for_scalar_square() {
        let m = estimate_lipschitz_m(&Square, &DenseVector::zeros(1), 1.0, 50, 9).unwrap();
        assert!((m - 3.0).abs() <= 1e-12, "estimate {m}");
    }

    #[test]
    fn lipschitz_estimate_stable_across_seeds() {
        let p = LogSumExpProblem::generate(4, 6, 0.5, 42);
        let x_star = DenseVector::zeros(4);
        let estimates: Vec<f64> = (0..4)
            .map(|s| estimate_lipschitz_m(&p, &x_star, 0.5, 1000, 1000 + s).unwrap())
            .collect();
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        for e in &estimates {
            assert!(
                (e - mean).abs() <= 0.2 * mean,
                "estimate {e} strays from mean {mean}"
            );
        }
        assert!(mean > 0.0);
    }

    #[test]
    fn problem_json_round_trips() {
        let instances = vec![
            ProblemInstance::Linear(LinearSystem::generate(4, 3)),
            ProblemInstance::LogSumExp(LogSumExpProblem::generate(3, 5, 1.25, 4)),
            ProblemInstance::Chandrasekhar(ChandrasekharProblem::new(0.9, 6).unwrap()),
        ];
        for p in instances {
            let doc = p.to_json();
            let text = serde_json::to_string(&doc).unwrap();
            let parsed: ProblemJson = serde_json::from_str(&text).unwrap();
            let q = ProblemInstance::from_json(&parsed).unwrap();
            let x = random_point(p.dim(), 1, 0.4).add(&match p {
                ProblemInstance::Chandrasekhar(_) => DenseVector::ones(p.dim()),
                _ => DenseVector::zeros(p.dim()),
            });
            let fp = p.residual(&x).unwrap();
            let fq = q.residual(&x).unwrap();
            assert_eq!(
                fp.as_slice(),
                fq.as_slice(),
                "{} round trip drifted",
                p.kind()
            );
            assert_eq!(text, serde_json::to_string(&q.to_json()).unwrap());
        }
    }
}
