//! Convergence potentials, rate certificates and step-wise inequality
//! checks for Broyden trajectories.
//!
//! Against a Newton-refined reference root `x_*` with Jacobian `J_*`,
//! `μ = 1/‖J_*⁻¹‖`, `L = ‖J_*‖` and `κ = L/μ`, a trajectory is measured by
//!
//! * `r_k = ‖x_k - x_*‖`,
//! * `λ_k = ‖J_*⁻¹ F(x_k)‖`,
//! * `F_k = ‖F(x_k)‖`,
//! * `σ_k = ‖J_*⁻¹ (B_k - J_*)‖_F` (good scheme),
//! * `τ_k = ‖J_* (H_k - J_*⁻¹)‖_F` (bad scheme).
//!
//! Given a Lipschitz constant `M` for the Jacobian relative to `x_*`, the
//! smallest admissible contraction factor `q_m` solves
//! `q(1-q)(q/(1+q) - σ₀) = 8 M r₀/μ` for the good scheme and
//! `q(1-q)(q/κ - τ₀) = 7 M r₀/μ` for the bad scheme, over the interval
//! where the left side is increasing. When the entry conditions
//! `32 M r₀/μ + σ₀ ≤ 1/3` (good) or `28 M r₀/μ + τ₀ ≤ 1/(2κ)` (bad) hold,
//! the certified envelopes are
//!
//! * `r_{k+1} ≤ q_m r_k`,
//! * `λ_k ≤ [q_m²/k]^{k/2} λ₀` (good),
//! * `F_k ≤ [10 q_m²/(k κ²)]^{k/2} F₀` (bad),
//!
//! and [`check_step_inequalities`] audits the per-step recursions those
//! envelopes are built from, using a Gauss-Legendre quadrature of the
//! integral Jacobian `J_k = ∫₀¹ J(x_k + t u_k) dt` (which satisfies
//! `y_k = J_k u_k` exactly).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, invert, lu_factor, spectral_norm, DenseMatrix, DenseVector};
use crate::problems::Problem;
use crate::solvers::{newton_solve, SolveTrace, SolverConfig};

/// Quadrature resolution used for integral Jacobians in inequality checks.
pub const DEFAULT_QUADRATURE_NODES: usize = 16;

/// Additive padding absorbing quadrature and rounding error when judging
/// step-inequality slacks.
pub const SLACK_TOLERANCE: f64 = 1e-7;

/// Residuals below `ROUNDING_FLOOR_FACTOR ×` the initial residual are past
/// what double precision can witness; checks stop there.
pub const ROUNDING_FLOOR_FACTOR: f64 = 1e-14;

/// Which Broyden scheme a trace came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Good,
    Bad,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Good => "good",
            Scheme::Bad => "bad",
        })
    }
}

/// How the Lipschitz constant entering a certificate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MSource {
    Provided,
    Estimated,
}

// ── Reference solution ──────────────────────────────────────────────

/// A Newton-refined root together with the spectral data of its Jacobian.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub x_star: DenseVector,
    pub j_star: DenseMatrix,
    pub j_star_inv: DenseMatrix,
    /// `1/‖J_*⁻¹‖`.
    pub mu: f64,
    /// `‖J_*‖`.
    pub l: f64,
    /// `L/μ`.
    pub kappa: f64,
}

/// Refines `x_hint` with Newton's method and packages the root data.
///
/// Fails with [`Error::NoConvergence`] if the refined residual stays above
/// `1e-10`, and with [`Error::DegenerateSolution`] if the Jacobian at the
/// root does not factor.
pub fn reference_solution(p: &dyn Problem, x_hint: &DenseVector) -> Result<ReferenceSolution> {
    let cfg = SolverConfig {
        tol_residual: 1e-13,
        max_iters: 100,
        ..SolverConfig::default()
    };
    let trace = newton_solve(p, x_hint, &cfg)?;
    let residual = trace
        .records
        .last()
        .map(|r| r.residual_norm)
        .unwrap_or(f64::INFINITY);
    if residual > 1e-10 {
        return Err(Error::NoConvergence { residual });
    }
    let x_star = trace.final_x;
    let j_star = p.jacobian(&x_star)?;
    let factor = lu_factor(&j_star).map_err(|_| Error::DegenerateSolution)?;
    let j_star_inv = factor.inverse();
    let l = spectral_norm(&j_star)?;
    let inv_norm = spectral_norm(&j_star_inv)?;
    Ok(ReferenceSolution {
        x_star,
        j_star,
        j_star_inv,
        mu: 1.0 / inv_norm,
        l,
        // ‖J‖·‖J⁻¹‖ ≥ 1 for any submultiplicative norm; guard the computed
        // product against dipping below by rounding.
        kappa: (l * inv_norm).max(1.0),
    })
}

// ── Potentials ──────────────────────────────────────────────────────

/// Per-iteration convergence potentials along a trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialTrace {
    pub r: Vec<f64>,
    pub lambda: Vec<f64>,
    pub f: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
}

impl PotentialTrace {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// σ₀ or τ₀ depending on the scheme the trace came from.
    pub fn initial_distance(&self, scheme: Scheme) -> Option<f64> {
        match scheme {
            Scheme::Good => self.sigma.as_ref().and_then(|s| s.first().copied()),
            Scheme::Bad => self.tau.as_ref().and_then(|t| t.first().copied()),
        }
    }

    /// Index of the first iterate whose residual sits at or below the
    /// rounding floor `1e-14 × F₀`.
    pub fn rounding_floor_index(&self) -> Option<usize> {
        let floor = ROUNDING_FLOOR_FACTOR * self.f.first().copied().unwrap_or(0.0);
        self.f.iter().position(|&f| f <= floor)
    }
}

/// Evaluates `r_k`, `λ_k`, `F_k` and, when snapshots are present, `σ_k`
/// (good) or `τ_k` (bad) along a trace.
pub fn compute_potentials(
    trace: &SolveTrace,
    reference: &ReferenceSolution,
    scheme: Scheme,
) -> Result<PotentialTrace> {
    let mut r = Vec::with_capacity(trace.records.len());
    let mut lambda = Vec::with_capacity(trace.records.len());
    let mut f = Vec::with_capacity(trace.records.len());
    for rec in &trace.records {
        r.push(rec.x.sub(&reference.x_star).norm());
        lambda.push(reference.j_star_inv.matvec(&rec.residual).norm());
        f.push(rec.residual_norm);
    }
    let (mut sigma, mut tau) = (None, None);
    if let Some(snaps) = trace.approx_jacobians.as_ref() {
        if snaps.len() != trace.records.len() {
            return Err(Error::MissingSnapshots);
        }
        match scheme {
            Scheme::Good => {
                sigma = Some(
                    snaps
                        .iter()
                        .map(|b| {
                            frobenius_norm(&reference.j_star_inv.matmul(&b.sub(&reference.j_star)))
                        })
                        .collect(),
                );
            }
            Scheme::Bad => {
                tau = Some(
                    snaps
                        .iter()
                        .map(|h| {
                            frobenius_norm(&reference.j_star.matmul(&h.sub(&reference.j_star_inv)))
                        })
                        .collect(),
                );
            }
        }
    }
    Ok(PotentialTrace {
        r,
        lambda,
        f,
        sigma,
        tau,
    })
}

// ── Integral Jacobian ───────────────────────────────────────────────

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-flavored initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        // z is the i-th root from the +1 end; mirror for the other half.
        nodes[i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        nodes[n - 1 - i] = 0.5 * (1.0 - z);
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature of `J(x_from + t (x_to - x_from))` over `t ∈ [0, 1]`.
///
/// For problems with an affine Jacobian the result is exact; in general it
/// satisfies `J_k u_k = y_k` to quadrature accuracy.
pub fn integral_jacobian(
    p: &dyn Problem,
    x_from: &DenseVector,
    x_to: &DenseVector,
    nodes: usize,
) -> Result<DenseMatrix> {
    let (ts, ws) = gauss_legendre_unit(nodes);
    let direction = x_to.sub(x_from);
    let mut acc = DenseMatrix::zeros(p.dim(), p.dim());
    for (t, w) in ts.iter().zip(&ws) {
        let x = x_from.add(&direction.scale(*t));
        acc = acc.add(&p.jacobian(&x)?.scale(*w));
    }
    Ok(acc)
}

// ── q_m root finders ────────────────────────────────────────────────

const QM_BISECTION_TOL: f64 = 1e-12;

fn bisect_increasing(f: impl Fn(f64) -> f64, lo: f64, hi: f64, target: f64) -> f64 {
    if target <= f(lo) {
        return lo;
    }
    if f(hi) <= target {
        return hi;
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > QM_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest admissible contraction factor for the good scheme: the root of
/// `q(1-q)(q/(1+q) - σ₀) = 8·Mr₀/μ` on the interval where the left side
/// increases. Returns `None` when the entry condition
/// `32·Mr₀/μ + σ₀ ≤ 1/3` fails.
pub fn qm_good(sigma0: f64, mr0_over_mu: f64) -> Option<f64> {
    assert!(sigma0 >= 0.0 && mr0_over_mu >= 0.0);
    if 32.0 * mr0_over_mu + sigma0 > 1.0 / 3.0 {
        return None;
    }
    let lo = sigma0 / (1.0 - sigma0);
    let target = 8.0 * mr0_over_mu;
    let f = |q: f64| q * (1.0 - q) * (q / (1.0 + q) - sigma0);
    Some(bisect_increasing(f, lo, 0.5, target))
}

/// Bad-scheme analogue: root of `q(1-q)(q/κ - τ₀) = 7·Mr₀/μ`, `None` when
/// `28·Mr₀/μ + τ₀ ≤ 1/(2κ)` fails.
pub fn qm_bad(tau0: f64, mr0_over_mu: f64, kappa: f64) -> Option<f64> {
    assert!(tau0 >= 0.0 && mr0_over_mu >= 0.0 && kappa >= 1.0);
    if 28.0 * mr0_over_mu + tau0 > 0.5 / kappa {
        return None;
    }
    let lo = kappa * tau0;
    let target = 7.0 * mr0_over_mu;
    let f = |q: f64| q * (1.0 - q) * (q / kappa - tau0);
    Some(bisect_increasing(f, lo, 0.5, target))
}

// ── Initial-condition verdicts ──────────────────────────────────────

/// Outcome of the theorem entry conditions for one scheme, with margins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialConditionVerdict {
    pub scheme: Scheme,
    /// σ₀ or τ₀, whichever the scheme uses.
    pub initial_distance: f64,
    pub mr0_over_mu: f64,
    pub kappa: f64,
    /// `32·Mr₀/μ + σ₀ ≤ 1/3` (good) or `28·Mr₀/μ + τ₀ ≤ 1/(2κ)` (bad).
    pub region_holds: bool,
    pub region_margin: f64,
    pub qm: Option<f64>,
    /// `σ₀ ≤ q_m/(1+q_m)` (good) or `τ₀ ≤ q_m/κ` (bad), evaluated at the
    /// computed `q_m`.
    pub contraction_holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contraction_margin: Option<f64>,
    /// Bad scheme only: `q_m < min{0.5κ, 1}`, the cap its superlinear
    /// envelope requires. Always true for the good scheme.
    pub super_cap_ok: bool,
}

/// Evaluates the entry conditions for `σ₀`/`τ₀` and `Mr₀/μ`; `kappa` is
/// ignored by the good scheme.
pub fn check_initial_conditions(
    dist0: f64,
    mr0_over_mu: f64,
    kappa: f64,
    scheme: Scheme,
) -> InitialConditionVerdict {
    match scheme {
        Scheme::Good => {
            let margin = 1.0 / 3.0 - (32.0 * mr0_over_mu + dist0);
            let qm = qm_good(dist0, mr0_over_mu);
            let cmargin = qm.map(|q| q / (1.0 + q) - dist0);
            InitialConditionVerdict {
                scheme,
                initial_distance: dist0,
                mr0_over_mu,
                kappa,
                region_holds: margin >= 0.0,
                region_margin: margin,
                qm,
                contraction_holds: cmargin.is_some_and(|m| m >= -1e-12),
                contraction_margin: cmargin,
                super_cap_ok: true,
            }
        }
        Scheme::Bad => {
            let margin = 0.5 / kappa - (28.0 * mr0_over_mu + dist0);
            let qm = qm_bad(dist0, mr0_over_mu, kappa);
            let cmargin = qm.map(|q| q / kappa - dist0);
            let cap = (0.5 * kappa).min(1.0);
            InitialConditionVerdict {
                scheme,
                initial_distance: dist0,
                mr0_over_mu,
                kappa,
                region_holds: margin >= 0.0,
                region_margin: margin,
                qm,
                contraction_holds: cmargin.is_some_and(|m| m >= -1e-12),
                contraction_margin: cmargin,
                super_cap_ok: qm.is_none_or(|q| q < cap),
            }
        }
    }
}

// ── Bound curves ────────────────────────────────────────────────────

/// Certified λ envelope for the good scheme, `k = 1..=k_max`: the tighter
/// of `[q_m²/k]^{k/2} λ₀` and the closed form
/// `[6(σ₀+√(Mr₀/μ))/√k]^k λ₀`.
pub fn bound_curve_good(
    sigma0: f64,
    mr0_over_mu: f64,
    lambda0: f64,
    k_max: usize,
) -> Result<Vec<f64>> {
    let qm = qm_good(sigma0, mr0_over_mu).ok_or_else(|| Error::InitialConditionUnmet {
        detail: format!(
            "32·Mr0/mu + sigma0 = {} exceeds 1/3",
            32.0 * mr0_over_mu + sigma0
        ),
    })?;
    let theta = 6.0 * (sigma0 + mr0_over_mu.sqrt());
    Ok((1..=k_max)
        .map(|k| {
            let kf = k as f64;
            let lemma = (qm * qm / kf).powf(kf / 2.0);
            let theorem = (theta * theta / kf).powf(kf / 2.0);
            lemma.min(theorem) * lambda0
        })
        .collect())
}

/// Certified F envelope for the bad scheme, `k = 1..=k_max`:
/// `[10 q_m²/(k κ²)]^{k/2} F₀`. Requires the entry condition and
/// `q_m < min{0.5κ, 1}`.
pub fn bound_curve_bad(
    tau0: f64,
    mr0_over_mu: f64,
    kappa: f64,
    f0: f64,
    k_max: usize,
) -> Result<Vec<f64>> {
    let qm = qm_bad(tau0, mr0_over_mu, kappa).ok_or_else(|| Error::InitialConditionUnmet {
        detail: format!(
            "28·Mr0/mu + tau0 = {} exceeds 1/(2·kappa) = {}",
            28.0 * mr0_over_mu + tau0,
            0.5 / kappa
        ),
    })?;
    let cap = (0.5 * kappa).min(1.0);
    if qm >= cap {
        return Err(Error::InitialConditionUnmet {
            detail: format!("q_m = {qm} is not below the superlinear cap {cap}"),
        });
    }
    Ok(bad_f_envelope(qm, kappa, f0, k_max))
}

fn bad_f_envelope(qm: f64, kappa: f64, f0: f64, k_max: usize) -> Vec<f64> {
    (1..=k_max)
        .map(|k| {
            let kf = k as f64;
            (10.0 * qm * qm / (kf * kappa * kappa)).powf(kf / 2.0) * f0
        })
        .collect()
}

/// λ-form of the bad-scheme envelope, which carries a κ prefactor:
/// `λ_k ≤ κ [10 q_m²/(k κ²)]^{k/2} λ₀`.
pub fn bad_lambda_envelope(qm: f64, kappa: f64, lambda0: f64, k_max: usize) -> Vec<f64> {
    bad_f_envelope(qm, kappa, kappa * lambda0, k_max)
}

// ── Banach-lemma check ──────────────────────────────────────────────

/// For `‖E‖ < 1`, returns `(‖(I-E)⁻¹‖, ‖(I-E)⁻¹ - I‖)` after asserting
/// they obey the Neumann-series bounds `1/(1-‖E‖)` and `‖E‖/(1-‖E‖)`.
pub fn banach_bound_check(e: &DenseMatrix) -> Result<(f64, f64)> {
    let ne = spectral_norm(e)?;
    if ne >= 1.0 {
        return Err(Error::NormTooLarge { norm: ne });
    }
    let n = e.rows();
    let inv = invert(&DenseMatrix::identity(n).sub(e))?;
    let v1 = spectral_norm(&inv)?;
    let v2 = spectral_norm(&inv.sub(&DenseMatrix::identity(n)))?;
    let pad = 1e-9;
    assert!(
        v1 <= 1.0 / (1.0 - ne) * (1.0 + pad) + pad,
        "inverse norm {v1} exceeds Banach bound {}",
        1.0 / (1.0 - ne)
    );
    assert!(
        v2 <= ne / (1.0 - ne) * (1.0 + pad) + pad,
        "inverse deviation {v2} exceeds Banach bound {}",
        ne / (1.0 - ne)
    );
    Ok((v1, v2))
}

// ── Step-wise inequality checks ─────────────────────────────────────

/// Signed slacks (`RHS - LHS`, so satisfied means `≥ -SLACK_TOLERANCE`) of
/// the per-step lemma inequalities at transition `k → k+1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSlacks {
    pub k: usize,
    /// Frobenius recursion for σ (good) or τ (bad) in its direct form.
    /// `None` when the update was skipped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_recursion: Option<f64>,
    /// Same recursion with the residual-ratio term (λ ratio for good, F
    /// ratio for bad) substituted in.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_recursion_ratio: Option<f64>,
    /// Linear-contraction recursion for `r`. `None` when its hypothesis
    /// (σ_k < 1) fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_recursion: Option<f64>,
    /// Mean-value bound `‖J_k - J_*‖ ≤ M/2 (r_k + r_{k+1})`.
    pub mean_jacobian: f64,
    /// Taylor remainder bound `‖F(x_k) - J_*(x_k - x_*)‖ ≤ M/2 r_k²`.
    pub taylor_remainder: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepInequalityReport {
    pub scheme: Scheme,
    /// Slacks per transition, stopping at the rounding floor.
    pub steps: Vec<StepSlacks>,
}

impl StepInequalityReport {
    /// True when every recorded slack clears `-SLACK_TOLERANCE`.
    pub fn all_satisfied(&self) -> bool {
        self.steps.iter().all(|s| {
            s.distance_recursion.is_none_or(|v| v >= -SLACK_TOLERANCE)
                && s.distance_recursion_ratio
                    .is_none_or(|v| v >= -SLACK_TOLERANCE)
                && s.r_recursion.is_none_or(|v| v >= -SLACK_TOLERANCE)
                && s.mean_jacobian >= -SLACK_TOLERANCE
                && s.taylor_remainder >= -SLACK_TOLERANCE
        })
    }

    pub fn worst_slack(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| {
                [
                    s.distance_recursion,
                    s.distance_recursion_ratio,
                    s.r_recursion,
                    Some(s.mean_jacobian),
                    Some(s.taylor_remainder),
                ]
            })
            .flatten()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Audits the per-step recursions behind the rate proofs along a recorded
/// trajectory, padding right-hand sides only through [`SLACK_TOLERANCE`]
/// at judgment time (raw slacks are recorded).
///
/// Violations are data, not errors; the report simply carries negative
/// slacks. Transitions past the rounding floor are not checked, and a
/// transition whose integral Jacobian cannot be evaluated (for example a
/// diverged iterate outside the problem domain) truncates the report.
pub fn check_step_inequalities(
    p: &dyn Problem,
    trace: &SolveTrace,
    potentials: &PotentialTrace,
    reference: &ReferenceSolution,
    m: f64,
    scheme: Scheme,
) -> Result<StepInequalityReport> {
    assert!(m >= 0.0, "Lipschitz constant must be nonnegative");
    let snaps = trace
        .approx_jacobians
        .as_ref()
        .ok_or(Error::MissingSnapshots)?;
    let dist = match scheme {
        Scheme::Good => potentials.sigma.as_ref(),
        Scheme::Bad => potentials.tau.as_ref(),
    }
    .ok_or(Error::MissingSnapshots)?;

    let floor = ROUNDING_FLOOR_FACTOR * potentials.f.first().copied().unwrap_or(0.0);
    let mu = reference.mu;
    let kappa = reference.kappa;
    let mut steps = Vec::new();

    for k in 0..trace.records.len().saturating_sub(1) {
        let rec = &trace.records[k];
        let Some(u) = rec.step.as_ref() else { continue };
        if potentials.f[k] <= floor {
            break;
        }
        let x_next = &trace.records[k + 1].x;
        let j_k = match integral_jacobian(p, &rec.x, x_next, DEFAULT_QUADRATURE_NODES) {
            Ok(j) => j,
            Err(_) => break,
        };
        let r_k = potentials.r[k];
        let r_next = potentials.r[k + 1];

        let mean_jacobian = 0.5 * m * (r_k + r_next) - spectral_norm(&j_k.sub(&reference.j_star))?;
        let taylor_remainder = {
            let linearized = reference.j_star.matvec(&rec.x.sub(&reference.x_star));
            0.5 * m * r_k * r_k - rec.residual.sub(&linearized).norm()
        };

        let (distance_recursion, distance_recursion_ratio, r_recursion) = match scheme {
            Scheme::Good => {
                let b_k = &snaps[k];
                let sigma_k = dist[k];
                let sigma_next = dist[k + 1];
                let jbar =
                    spectral_norm(&reference.j_star_inv.matmul(&j_k.sub(&reference.j_star)))?;
                let gain = 2.0 * (sigma_k * jbar + jbar * jbar);
                let direct = (!rec.update_skipped).then(|| {
                    let w = reference.j_star_inv.matvec(&j_k.sub(b_k).matvec(u));
                    let drop = (w.norm() / u.norm()).powi(2);
                    sigma_k * sigma_k - drop + gain - sigma_next * sigma_next
                });
                let ratio = (!rec.update_skipped && potentials.lambda[k] > 0.0).then(|| {
                    let lam_ratio = potentials.lambda[k + 1] / potentials.lambda[k];
                    let w = reference.j_star_inv.matvec(&b_k.matvec(u));
                    let drop = lam_ratio * lam_ratio * (w.norm() / u.norm()).powi(2);
                    sigma_k * sigma_k - drop + gain - sigma_next * sigma_next
                });
                let r_rec = (sigma_k < 1.0)
                    .then(|| (0.5 * m * r_k / mu + sigma_k) / (1.0 - sigma_k) * r_k - r_next);
                (direct, ratio, r_rec)
            }
            Scheme::Bad => {
                let h_k = &snaps[k];
                let tau_k = dist[k];
                let tau_next = dist[k + 1];
                let Ok(j_k_inv) = invert(&j_k) else { break };
                let jtilde =
                    spectral_norm(&reference.j_star.matmul(&j_k_inv.sub(&reference.j_star_inv)))?;
                let gain = 2.0 * (tau_k * jtilde + jtilde * jtilde);
                let y = rec.y.as_ref();
                let direct = match (rec.update_skipped, y) {
                    (false, Some(y)) if y.norm() > 0.0 => {
                        let w = reference.j_star.matvec(&j_k_inv.sub(h_k).matvec(y));
                        let drop = (w.norm() / y.norm()).powi(2);
                        Some(tau_k * tau_k - drop + gain - tau_next * tau_next)
                    }
                    _ => None,
                };
                let ratio = if !rec.update_skipped && potentials.f[k] > 0.0 {
                    let jh = reference.j_star.matmul(h_k);
                    match invert(&jh) {
                        Ok(jh_inv) => {
                            let amp = (1.0
                                + spectral_norm(
                                    &j_k.sub(&reference.j_star).matmul(&reference.j_star_inv),
                                )?)
                            .powi(2)
                                * spectral_norm(&jh)?.powi(2)
                                * spectral_norm(&jh_inv)?.powi(2);
                            let f_ratio = potentials.f[k + 1] / potentials.f[k];
                            Some(
                                tau_k * tau_k - f_ratio * f_ratio / amp + gain
                                    - tau_next * tau_next,
                            )
                        }
                        Err(_) => None,
                    }
                } else {
                    None
                };
                let r_rec =
                    Some((kappa * tau_k + (1.0 + tau_k) * 0.5 * m * r_k / mu) * r_k - r_next);
                (direct, ratio, r_rec)
            }
        };

        steps.push(StepSlacks {
            k,
            distance_recursion,
            distance_recursion_ratio,
            r_recursion,
            mean_jacobian,
            taylor_remainder,
        });
    }

    Ok(StepInequalityReport { scheme, steps })
}

// ── Rate certificates ───────────────────────────────────────────────

/// Predicted-versus-observed superlinear envelope for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateCertificate {
    pub scheme: Scheme,
    pub q_m: Option<f64>,
    pub conditions: InitialConditionVerdict,
    pub m_value: f64,
    pub m_source: MSource,
    /// Envelope for `k = 1..` in the observed quantity (λ for good, F for
    /// bad); present only when every entry condition holds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_curve: Option<Vec<f64>>,
    /// Name of the observed quantity: `"lambda"` or `"F"`.
    pub observed_name: String,
    pub observed_curve: Vec<f64>,
    /// First `k ≥ 1` above the rounding floor where the observation
    /// exceeds the envelope.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_violation: Option<usize>,
    /// First `k` at or below the rounding floor, where checking stops.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounding_floor_k: Option<usize>,
}

impl RateCertificate {
    /// Certified and observed to hold: conditions met and no violation
    /// above the floor.
    pub fn holds(&self) -> bool {
        self.bound_curve.is_some() && self.first_violation.is_none()
    }
}

/// Builds the certificate for a run from its potentials and the reference.
///
/// `m` is the Lipschitz constant to use; `m_source` records where it came
/// from, since every bound is only as valid as `M`.
pub fn build_certificate(
    potentials: &PotentialTrace,
    reference: &ReferenceSolution,
    m: f64,
    m_source: MSource,
    scheme: Scheme,
) -> Result<RateCertificate> {
    let dist0 = potentials
        .initial_distance(scheme)
        .ok_or(Error::MissingSnapshots)?;
    let r0 = *potentials.r.first().ok_or(Error::MissingSnapshots)?;
    let mr0_over_mu = m * r0 / reference.mu;
    let conditions = check_initial_conditions(dist0, mr0_over_mu, reference.kappa, scheme);
    let qm = conditions.qm;

    let (observed_name, observed_curve): (&str, Vec<f64>) = match scheme {
        Scheme::Good => ("lambda", potentials.lambda.clone()),
        Scheme::Bad => ("F", potentials.f.clone()),
    };
    let k_max = observed_curve.len().saturating_sub(1);

    let certified = conditions.region_holds && conditions.super_cap_ok && qm.is_some();
    let bound_curve = if certified && k_max > 0 {
        let curve = match scheme {
            Scheme::Good => bound_curve_good(dist0, mr0_over_mu, observed_curve[0], k_max)?,
            Scheme::Bad => bound_curve_bad(
                dist0,
                mr0_over_mu,
                reference.kappa,
                observed_curve[0],
                k_max,
            )?,
        };
        Some(curve)
    } else {
        None
    };

    let rounding_floor_k = potentials.rounding_floor_index();
    let first_violation = bound_curve.as_ref().and_then(|bounds| {
        (1..=k_max)
            .filter(|&k| rounding_floor_k.is_none_or(|fk| k < fk))
            .find(|&k| observed_curve[k] > bounds[k - 1] * (1.0 + 1e-9) + 1e-300)
    });

    Ok(RateCertificate {
        scheme,
        q_m: qm,
        conditions,
        m_value: m,
        m_source,
        bound_curve,
        observed_name: observed_name.to_string(),
        observed_curve,
        first_violation,
        rounding_floor_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::condition_number;
    use crate::problems::{
        estimate_lipschitz_m, ChandrasekharProblem, LinearSystem, LogSumExpProblem,
    };
    use crate::rng::SplitMix64;
    use crate::solvers::{broyden_good_solve, IterationRecord, SolveStatus};

    fn random_vec(dim: usize, seed: u64, scale: f64) -> DenseVector {
        let mut rng = SplitMix64::new(seed);
        DenseVector::from_fn(dim, |_| scale * rng.uniform_symmetric())
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (t, w) = gauss_legendre_unit(16);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for p in 0..32 {
            let got: f64 = t.iter().zip(&w).map(|(t, w)| w * t.powi(p)).sum();
            let want = 1.0 / (p as f64 + 1.0);
            assert!((got - want).abs() < 1e-13, "degree {p}: {got} vs {want}");
        }
    }

    #[test]
    fn reference_of_linear_system() {
        let p = LinearSystem::generate(5, 3);
        let reference = reference_solution(&p, &DenseVector::zeros(5)).unwrap();
        let direct = lu_factor(p.matrix()).unwrap().solve(p.rhs()).unwrap();
        assert!(reference.x_star.sub(&direct).norm() <= 1e-10);
        let cond = condition_number(p.matrix()).unwrap();
        assert!((reference.kappa - cond).abs() <= 1e-6 * cond);
        // J_* J_*⁻¹ ≈ I and κ = L/μ by construction.
        let prod = reference.j_star.matmul(&reference.j_star_inv);
        assert!(frobenius_norm(&prod.sub(&DenseMatrix::identity(5))) <= 1e-8);
        assert!((reference.kappa - reference.l / reference.mu).abs() <= 1e-10 * reference.kappa);
    }

    #[test]
    fn reference_of_logsumexp_is_origin() {
        let p = LogSumExpProblem::generate(6, 9, 1.0, 8);
        let reference = reference_solution(&p, &random_vec(6, 2, 0.5)).unwrap();
        assert!(reference.x_star.norm() <= 1e-10);
    }

    #[test]
    fn reference_of_chandrasekhar_c_zero() {
        let p = ChandrasekharProblem::new(0.0, 8).unwrap();
        let reference = reference_solution(&p, &DenseVector::ones(8).scale(1.3)).unwrap();
        assert!(reference.x_star.sub(&DenseVector::ones(8)).norm() <= 1e-12);
        assert!((reference.kappa - 1.0).abs() <= 1e-9);
    }

    fn synthetic_reference(j_star: DenseMatrix, dim: usize) -> ReferenceSolution {
        let inv = invert(&j_star).unwrap();
        let l = spectral_norm(&j_star).unwrap();
        let inv_norm = spectral_norm(&inv).unwrap();
        ReferenceSolution {
            x_star: DenseVector::zeros(dim),
            j_star,
            j_star_inv: inv,
            mu: 1.0 / inv_norm,
            l,
            kappa: l * inv_norm,
        }
    }

    fn single_record_trace(x: DenseVector, residual: DenseVector, snap: DenseMatrix) -> SolveTrace {
        let residual_norm = residual.norm();
        SolveTrace {
            records: vec![IterationRecord {
                k: 0,
                x: x.clone(),
                residual,
                residual_norm,
                step: None,
                y: None,
                update_denominator: None,
                update_skipped: false,
            }],
            status: SolveStatus::Converged,
            final_x: x,
            approx_jacobians: Some(vec![snap]),
            inverse_jacobians: None,
        }
    }

    #[test]
    fn potentials_vanish_at_the_root() {
        let reference = synthetic_reference(DenseMatrix::identity(3), 3);
        let trace = single_record_trace(
            DenseVector::zeros(3),
            DenseVector::zeros(3),
            DenseMatrix::identity(3),
        );
        let pot = compute_potentials(&trace, &reference, Scheme::Good).unwrap();
        assert_eq!(pot.r[0], 0.0);
        assert_eq!(pot.lambda[0], 0.0);
        assert_eq!(pot.f[0], 0.0);
        assert_eq!(pot.sigma.unwrap()[0], 0.0);
    }

    #[test]
    fn sigma_of_doubled_identity_is_sqrt3() {
        let reference = synthetic_reference(DenseMatrix::identity(3), 3);
        let trace = single_record_trace(
            DenseVector::zeros(3),
            DenseVector::zeros(3),
            DenseMatrix::identity(3).scale(2.0),
        );
        let pot = compute_potentials(&trace, &reference, Scheme::Good).unwrap();
        assert!((pot.sigma.unwrap()[0] - 3.0f64.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn tau_of_half_inverse_is_sqrt2() {
        let reference = synthetic_reference(DenseMatrix::identity(2).scale(2.0), 2);
        let trace = single_record_trace(
            DenseVector::zeros(2),
            DenseVector::zeros(2),
            DenseMatrix::identity(2),
        );
        let pot = compute_potentials(&trace, &reference, Scheme::Bad).unwrap();
        assert!((pot.tau.unwrap()[0] - 2.0f64.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn integral_jacobian_of_linear_is_constant() {
        let p = LinearSystem::generate(4, 5);
        let j = integral_jacobian(&p, &random_vec(4, 1, 1.0), &random_vec(4, 2, 1.0), 4).unwrap();
        assert!(frobenius_norm(&j.sub(p.matrix())) <= 1e-13);
    }

    /// Problem with Jacobian affine in x: F_i = x_i + x_i²/2, J = I + diag(x).
    struct AffineJacobian(usize);
    impl Problem for AffineJacobian {
        fn dim(&self) -> usize {
            self.0
        }
        fn residual(&self, x: &DenseVector) -> crate::error::Result<DenseVector> {
            Ok(DenseVector::from_fn(self.0, |i| x[i] + 0.5 * x[i] * x[i]))
        }
        fn jacobian(&self, x: &DenseVector) -> crate::error::Result<DenseMatrix> {
            Ok(DenseMatrix::from_fn(self.0, self.0, |i, j| {
                if i == j {
                    1.0 + x[i]
                } else {
                    0.0
                }
            }))
        }
        fn has_jacobian(&self) -> bool {
            true
        }
    }

    #[test]
    fn integral_jacobian_affine_equals_midpoint() {
        let p = AffineJacobian(3);
        let a = random_vec(3, 7, 1.0);
        let b = random_vec(3, 8, 1.0);
        let j = integral_jacobian(&p, &a, &b, 2).unwrap();
        let mid = a.add(&b).scale(0.5);
        let want = p.jacobian(&mid).unwrap();
        assert!(frobenius_norm(&j.sub(&want)) <= 1e-14);
    }

    #[test]
    fn integral_jacobian_reproduces_secant_vector() {
        let p = LogSumExpProblem::generate(6, 10, 1.0, 19);
        let x0 = random_vec(6, 20, 0.4);
        let x1 = x0.add(&random_vec(6, 21, 0.2));
        let j = integral_jacobian(&p, &x0, &x1, DEFAULT_QUADRATURE_NODES).unwrap();
        let u = x1.sub(&x0);
        let y = p.residual(&x1).unwrap().sub(&p.residual(&x0).unwrap());
        assert!(j.matvec(&u).sub(&y).norm() <= 1e-8);
    }

    #[test]
    fn qm_good_examples() {
        // f(1/2) = (1/4)(1/3) = 1/12 = 8 · (1/96), so q_m is exactly 1/2.
        let q = qm_good(0.0, 1.0 / 96.0).unwrap();
        assert!((q - 0.5).abs() <= 1e-9, "q_m = {q}");

        let q0 = qm_good(0.0, 0.0).unwrap();
        assert!(q0 <= 1e-10);

        let q = qm_good(0.1, 1e-4).unwrap();
        let anchor = 0.1 + 1e-4f64.sqrt();
        assert!(q >= 0.5 * anchor && q <= 6.0 * anchor, "q_m = {q}");
    }

    #[test]
    fn qm_good_reproduces_target() {
        let (sigma0, mr0) = (0.05, 2e-3);
        let q = qm_good(sigma0, mr0).unwrap();
        let f = q * (1.0 - q) * (q / (1.0 + q) - sigma0);
        assert!((f - 8.0 * mr0).abs() <= 1e-10);
    }

    #[test]
    fn qm_good_absent_when_region_fails() {
        assert!(qm_good(0.34, 0.0).is_none());
        assert!(qm_good(0.0, 0.2).is_none());
    }

    #[test]
    fn qm_bad_examples() {
        // f(1/2) = (1/4)(1/2) = 1/8 = 7 · (1/56) at κ = 1.
        let q = qm_bad(0.0, 1.0 / 56.0, 1.0).unwrap();
        assert!((q - 0.5).abs() <= 1e-9, "q_m = {q}");

        let q0 = qm_bad(0.0, 0.0, 3.0).unwrap();
        assert!(q0 <= 1e-10);

        let (tau0, mr0, kappa) = (0.01, 1e-4, 4.0);
        let q = qm_bad(tau0, mr0, kappa).unwrap();
        let anchor = kappa * tau0 + (kappa * mr0).sqrt();
        assert!(q >= 0.5 * anchor && q <= 4.0 * anchor, "q_m = {q}");
        let f = q * (1.0 - q) * (q / kappa - tau0);
        assert!((f - 7.0 * mr0).abs() <= 1e-10);
    }

    #[test]
    fn initial_condition_arithmetic() {
        let v = check_initial_conditions(0.3, 1e-3, 1.0, Scheme::Good);
        assert!(v.region_holds); // 0.032 + 0.3 = 0.332 ≤ 1/3
        let v = check_initial_conditions(0.34, 0.0, 1.0, Scheme::Good);
        assert!(!v.region_holds);
        let v = check_initial_conditions(0.0, 1e-3, 10.0, Scheme::Bad);
        assert!(v.region_holds); // 0.028 ≤ 0.05
        assert!(v.contraction_holds);
    }

    #[test]
    fn bound_curve_good_degenerate_and_k1() {
        let zero = bound_curve_good(0.0, 0.0, 3.0, 5).unwrap();
        assert!(zero.iter().all(|&b| b == 0.0));

        // q_m = 1/2: the k = 1 envelope is [q²/1]^{1/2} λ₀ = q λ₀.
        let curve = bound_curve_good(0.0, 1.0 / 96.0, 2.0, 3).unwrap();
        assert!(
            (curve[0] - 0.5 * 2.0).abs() <= 1e-8,
            "k=1 bound {}",
            curve[0]
        );
    }

    #[test]
    fn bound_curve_bad_degenerate_and_k1() {
        let zero = bound_curve_bad(0.0, 0.0, 2.0, 3.0, 5).unwrap();
        assert!(zero.iter().all(|&b| b == 0.0));

        // κ = 1, q_m = 1/2: F₁ ≤ √(10 · 1/4) F₀ ≈ 1.5811 F₀ (vacuous but
        // well-defined) — except q_m = 1/2 hits the κ = 1 superlinear cap,
        // so the curve must be refused and flagged.
        match bound_curve_bad(0.0, 1.0 / 56.0, 1.0, 1.0, 3) {
            Err(Error::InitialConditionUnmet { .. }) => {}
            other => panic!("expected cap refusal, got {other:?}"),
        }
        // Slightly inside the cap the k = 1 value is as computed.
        let kappa = 1.5;
        let curve = bound_curve_bad(0.0, 1.0 / 168.0, kappa, 1.0, 1).unwrap();
        let qm = qm_bad(0.0, 1.0 / 168.0, kappa).unwrap();
        let want = (10.0 * qm * qm / (kappa * kappa)).sqrt();
        assert!((curve[0] - want).abs() <= 1e-12);
    }

    #[test]
    fn bad_lambda_envelope_carries_kappa_prefactor() {
        // λ-form: κ · [10q²/(kκ²)]^{k/2} λ₀. At k = 1 the κ cancels and the
        // value is √10·q·λ₀, which exceeds λ₀ whenever q > 1/√10 — the
        // envelope is reported as-is even when vacuous.
        for (q, kappa) in [(0.45f64, 20.0f64), (0.3, 10.0), (0.1, 2.0)] {
            let curve = bad_lambda_envelope(q, kappa, 2.0, 3);
            let want = 10f64.sqrt() * q * 2.0;
            assert!(
                (curve[0] - want).abs() <= 1e-12 * want,
                "k=1: {} vs {want}",
                curve[0]
            );
        }
        assert!(bad_lambda_envelope(0.45, 20.0, 1.0, 1)[0] > 1.0);
    }

    #[test]
    fn banach_examples() {
        let (v1, v2) = banach_bound_check(&DenseMatrix::zeros(3, 3)).unwrap();
        assert!((v1 - 1.0).abs() <= 1e-10);
        assert!(v2.abs() <= 1e-10);

        let (v1, v2) = banach_bound_check(&DenseMatrix::identity(3).scale(0.5)).unwrap();
        assert!((v1 - 2.0).abs() <= 1e-9);
        assert!((v2 - 1.0).abs() <= 1e-9);

        let e = {
            let raw = DenseMatrix::from_fn(4, 4, |i, j| {
                let mut rng = SplitMix64::new(17 + (i * 4 + j) as u64);
                rng.uniform_symmetric()
            });
            let norm = spectral_norm(&raw).unwrap();
            raw.scale(0.3 / norm)
        };
        banach_bound_check(&e).unwrap();

        match banach_bound_check(&DenseMatrix::identity(2).scale(1.5)) {
            Err(Error::NormTooLarge { .. }) => {}
            other => panic!("expected NormTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn linear_system_r_recursion_has_nonnegative_slack() {
        // With M = 0 the r recursion collapses to r⁺ ≤ σ/(1-σ)·r.
        let p = LinearSystem::generate(5, 23);
        let reference = reference_solution(&p, &DenseVector::zeros(5)).unwrap();
        let x0 = reference.x_star.add(&random_vec(5, 24, 0.5));
        let b0 = p.matrix().scale(1.06); // σ₀ = 0.06·√5 < 1
        let cfg = SolverConfig::default().with_snapshots();
        let trace = broyden_good_solve(&p, &x0, &b0, &cfg).unwrap();
        assert_eq!(trace.status, SolveStatus::Converged);
        let pot = compute_potentials(&trace, &reference, Scheme::Good).unwrap();
        let report =
            check_step_inequalities(&p, &trace, &pot, &reference, 0.0, Scheme::Good).unwrap();
        assert!(!report.steps.is_empty());
        for s in &report.steps {
            let slack = s.r_recursion.expect("sigma stays below 1 on this run");
            assert!(slack >= -1e-12, "r-recursion slack {slack} at k={}", s.k);
        }
        assert!(
            report.all_satisfied(),
            "worst slack {}",
            report.worst_slack()
        );
    }

    #[test]
    fn taylor_slack_is_zero_at_exact_root() {
        // Linear problem, record sitting exactly at the root, M = 0.
        let a = DenseMatrix::identity(3);
        let p = LinearSystem::new(a, DenseVector::zeros(3)).unwrap();
        let reference = reference_solution(&p, &DenseVector::ones(3)).unwrap();
        let mut trace = single_record_trace(
            DenseVector::zeros(3),
            DenseVector::zeros(3),
            DenseMatrix::identity(3),
        );
        // Give it one transition so the checker has a step to audit.
        trace.records[0].step =
            Some(DenseVector::zeros(3).add(&DenseVector::unit(3, 0).scale(0.0)));
        trace.records[0].y = Some(DenseVector::zeros(3));
        trace.records.push(IterationRecord {
            k: 1,
            x: DenseVector::zeros(3),
            residual: DenseVector::zeros(3),
            residual_norm: 0.0,
            step: None,
            y: None,
            update_denominator: None,
            update_skipped: true,
        });
        trace
            .approx_jacobians
            .as_mut()
            .unwrap()
            .push(DenseMatrix::identity(3));
        let pot = compute_potentials(&trace, &reference, Scheme::Good).unwrap();
        let report =
            check_step_inequalities(&p, &trace, &pot, &reference, 0.0, Scheme::Good).unwrap();
        // F₀ = 0 puts the trajectory at the floor immediately; no steps to
        // audit means trivially satisfied, but the Taylor identity at the
        // root is also directly zero:
        let lin = reference.j_star.matvec(&DenseVector::zeros(3));
        assert_eq!(lin.norm(), 0.0);
        assert!(report.all_satisfied());
    }

    #[test]
    fn certificate_on_certified_good_run() {
        let p = LogSumExpProblem::generate(4, 6, 1.0, 71);
        let reference = reference_solution(&p, &random_vec(4, 72, 0.3)).unwrap();
        let m = estimate_lipschitz_m(&p, &reference.x_star, 0.1, 400, 73).unwrap();
        // Choose the perturbation radius to satisfy the entry condition
        // with a factor-of-three margin.
        let delta = reference.mu / (96.0 * m) * 0.3;
        let eps = crate::harness::sample_unit_sphere(4, 74);
        let x0 = reference.x_star.add(&eps.scale(delta));
        let cfg = SolverConfig::default().with_snapshots();
        let trace = broyden_good_solve(&p, &x0, &reference.j_star, &cfg).unwrap();
        assert_eq!(trace.status, SolveStatus::Converged);
        let pot = compute_potentials(&trace, &reference, Scheme::Good).unwrap();
        let cert =
            build_certificate(&pot, &reference, m, MSource::Estimated, Scheme::Good).unwrap();
        assert!(
            cert.conditions.region_holds,
            "margin {}",
            cert.conditions.region_margin
        );
        assert!(cert.holds(), "violation at {:?}", cert.first_violation);
        let report =
            check_step_inequalities(&p, &trace, &pot, &reference, m, Scheme::Good).unwrap();
        assert!(
            report.all_satisfied(),
            "worst slack {}",
            report.worst_slack()
        );
    }
}
