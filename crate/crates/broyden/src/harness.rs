//! Experiment orchestration: shared initialization recipes, `B₀ = s·J`
//! sweeps, good-versus-bad comparisons and CSV/JSON emission.
//!
//! A comparison experiment fixes one problem, one shared starting point
//! `x₀`, and a grid of scales `s`; for each requested scheme and each `s`
//! it runs the solver from `B₀ = s·J(x₀)` (or `s·J(x_*)`), computes the
//! potentials and rate certificate against a Newton-refined reference, and
//! emits one CSV per run with the fixed header
//! `k,r,lambda,F,sigma_or_tau,bound,slack_sigma_rec,slack_r_rec`.
//!
//! Everything is driven by a single master seed through split sub-streams,
//! so identical configurations produce byte-identical outputs and growing
//! the `s` grid never perturbs existing runs.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    build_certificate, check_step_inequalities, compute_potentials, reference_solution, MSource,
    PotentialTrace, RateCertificate, ReferenceSolution, Scheme, StepInequalityReport,
};
use crate::error::{Error, Result};
use crate::linalg::{invert, DenseVector};
use crate::problems::{
    estimate_lipschitz_m, ChandrasekharProblem, LinearSystem, LogSumExpProblem, Problem,
    ProblemInstance,
};
use crate::rng::{derive_seed, SplitMix64};
use crate::solvers::{
    broyden_bad_solve, broyden_good_solve, IterationRecord, SolveStatus, SolveTrace, SolverConfig,
};

/// Fixed column order of every per-run CSV.
pub const CSV_HEADER: &str = "k,r,lambda,F,sigma_or_tau,bound,slack_sigma_rec,slack_r_rec";

// Sub-stream tags hung off the master seed.
const STREAM_X0: u64 = 1;
const STREAM_LIPSCHITZ: u64 = 2;
const STREAM_SPHERE: u64 = 3;

/// Uniform draw from the unit sphere: a standard-normal vector normalized
/// to unit length.
pub fn sample_unit_sphere(dim: usize, seed: u64) -> DenseVector {
    assert!(dim >= 1);
    let mut rng = SplitMix64::new(seed);
    loop {
        let v = DenseVector::from_fn(dim, |_| rng.standard_normal());
        let norm = v.norm();
        if norm > 1e-100 {
            return v.scale(1.0 / norm);
        }
    }
}

// ── Configuration ───────────────────────────────────────────────────

/// Problem selection mirrored field-for-field into JSON configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemSpec {
    Linear {
        dim: usize,
        seed: u64,
    },
    Logsumexp {
        n: usize,
        m: usize,
        gamma: f64,
        seed: u64,
    },
    Chandrasekhar {
        c: f64,
        n: usize,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<ProblemInstance> {
        Ok(match self {
            ProblemSpec::Linear { dim, seed } => {
                ProblemInstance::Linear(LinearSystem::generate(*dim, *seed))
            }
            ProblemSpec::Logsumexp { n, m, gamma, seed } => {
                if *n < 1 || *m < 1 {
                    return Err(Error::InvalidConfig(
                        "log-sum-exp needs n ≥ 1 and m ≥ 1".into(),
                    ));
                }
                ProblemInstance::LogSumExp(LogSumExpProblem::generate(*n, *m, *gamma, *seed))
            }
            ProblemSpec::Chandrasekhar { c, n } => {
                ProblemInstance::Chandrasekhar(ChandrasekharProblem::new(*c, *n)?)
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::Linear { dim, .. } => *dim,
            ProblemSpec::Logsumexp { n, .. } => *n,
            ProblemSpec::Chandrasekhar { n, .. } => *n,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSpec::Linear { .. } => "linear",
            ProblemSpec::Logsumexp { .. } => "logsumexp",
            ProblemSpec::Chandrasekhar { .. } => "chandrasekhar",
        }
    }

    /// Starting point handed to Newton when refining the reference root.
    pub fn newton_hint(&self) -> DenseVector {
        match self {
            ProblemSpec::Chandrasekhar { n, .. } => DenseVector::ones(*n),
            _ => DenseVector::zeros(self.dim()),
        }
    }
}

/// Rule producing the shared starting point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum InitSpec {
    /// `x₀` standard normal.
    Gaussian,
    /// `x₀ = x_* + radius_factor · ‖x_*‖ · ε`, `ε` uniform on the sphere.
    SpherePerturbation { radius_factor: f64 },
}

/// Where the scaled initial Jacobian is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianInit {
    AtX0,
    AtRoot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub init: InitSpec,
    pub b0_at: JacobianInit,
    pub schemes: Vec<Scheme>,
    pub solver: SolverConfig,
    pub s_grid: Vec<f64>,
    pub master_seed: u64,
    /// Lipschitz constant override; estimated by sampling when absent.
    #[serde(default)]
    pub lipschitz_m: Option<f64>,
    #[serde(default = "default_lipschitz_samples")]
    pub lipschitz_samples: usize,
}

fn default_lipschitz_samples() -> usize {
    200
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::Logsumexp {
                n: 10,
                m: 30,
                gamma: 1.0,
                seed: 42,
            },
            init: InitSpec::Gaussian,
            b0_at: JacobianInit::AtX0,
            schemes: vec![Scheme::Good, Scheme::Bad],
            solver: SolverConfig::default(),
            s_grid: vec![0.1, 0.2, 1.0, 2.0],
            master_seed: 42,
            lipschitz_m: None,
            lipschitz_samples: default_lipschitz_samples(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_grid.is_empty() {
            return Err(Error::InvalidConfig("s-grid must not be empty".into()));
        }
        if self.s_grid.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "every s in the grid must be finite and nonzero".into(),
            ));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("at least one scheme required".into()));
        }
        if let InitSpec::SpherePerturbation { radius_factor } = &self.init {
            if *radius_factor < 0.0 {
                return Err(Error::InvalidConfig("radius factor must be ≥ 0".into()));
            }
        }
        self.solver.validate()
    }
}

// ── Results ─────────────────────────────────────────────────────────

/// Spectral data of the reference root plus the Lipschitz constant used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub x_star_norm: f64,
    pub mu: f64,
    pub l: f64,
    pub kappa: f64,
    pub m_value: f64,
    pub m_source: MSource,
}

/// One grid point: the run itself and its diagnostics. Failed runs carry
/// their terminal status here like any other entry.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub scheme: Scheme,
    pub s: f64,
    pub trace: SolveTrace,
    pub potentials: PotentialTrace,
    pub certificate: Option<RateCertificate>,
    pub step_report: Option<StepInequalityReport>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub x0: DenseVector,
    pub reference: ReferenceSummary,
    pub runs: Vec<RunResult>,
}

// ── Comparison experiment ───────────────────────────────────────────

/// Runs the full good-versus-bad sweep described by `cfg`.
///
/// One shared `x₀` is drawn from the master seed; each `(scheme, s)` grid
/// point runs with `B₀ = s·J` (the bad scheme receives `H₀ = B₀⁻¹`),
/// records potentials and, when the reference and entry conditions allow,
/// a rate certificate. Grid points appear in configuration order.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let reference = reference_solution(&problem, &cfg.problem.newton_hint())?;
    let x0 = draw_x0(cfg, &reference)?;
    let (m_value, m_source) = lipschitz_for(cfg, &problem, &reference, &x0)?;

    let base = match cfg.b0_at {
        JacobianInit::AtX0 => problem.jacobian(&x0)?,
        JacobianInit::AtRoot => reference.j_star.clone(),
    };
    let mut solver_cfg = cfg.solver.clone();
    solver_cfg.snapshot_jacobians = true;

    let mut runs = Vec::with_capacity(cfg.schemes.len() * cfg.s_grid.len());
    for &scheme in &cfg.schemes {
        for &s in &cfg.s_grid {
            let b0 = base.scale(s);
            let trace = match scheme {
                Scheme::Good => broyden_good_solve(&problem, &x0, &b0, &solver_cfg)?,
                Scheme::Bad => match invert(&b0) {
                    Ok(h0) => broyden_bad_solve(&problem, &x0, &h0, &solver_cfg)?,
                    Err(Error::SingularMatrix { .. }) => singular_stub(&problem, &x0)?,
                    Err(e) => return Err(e),
                },
            };
            let potentials = compute_potentials(&trace, &reference, scheme)?;
            let (certificate, step_report) = if trace.approx_jacobians.is_some() {
                (
                    Some(build_certificate(
                        &potentials,
                        &reference,
                        m_value,
                        m_source,
                        scheme,
                    )?),
                    Some(check_step_inequalities(
                        &problem,
                        &trace,
                        &potentials,
                        &reference,
                        m_value,
                        scheme,
                    )?),
                )
            } else {
                (None, None)
            };
            runs.push(RunResult {
                scheme,
                s,
                trace,
                potentials,
                certificate,
                step_report,
            });
        }
    }

    Ok(ExperimentResult {
        config: cfg.clone(),
        x0,
        reference: ReferenceSummary {
            x_star_norm: reference.x_star.norm(),
            mu: reference.mu,
            l: reference.l,
            kappa: reference.kappa,
            m_value,
            m_source,
        },
        runs,
    })
}

fn draw_x0(cfg: &ExperimentConfig, reference: &ReferenceSolution) -> Result<DenseVector> {
    let dim = cfg.problem.dim();
    match &cfg.init {
        InitSpec::Gaussian => {
            let mut rng = SplitMix64::new(derive_seed(cfg.master_seed, &[STREAM_X0]));
            Ok(DenseVector::from_fn(dim, |_| rng.standard_normal()))
        }
        InitSpec::SpherePerturbation { radius_factor } => {
            let radius = radius_factor * reference.x_star.norm();
            if radius == 0.0 {
                return Err(Error::InvalidConfig(
                    "sphere perturbation is degenerate: radius_factor · ‖x_*‖ = 0 \
                     (use the gaussian rule for problems rooted at the origin)"
                        .into(),
                ));
            }
            let eps = sample_unit_sphere(dim, derive_seed(cfg.master_seed, &[STREAM_SPHERE]));
            Ok(reference.x_star.add(&eps.scale(radius)))
        }
    }
}

fn lipschitz_for(
    cfg: &ExperimentConfig,
    problem: &ProblemInstance,
    reference: &ReferenceSolution,
    x0: &DenseVector,
) -> Result<(f64, MSource)> {
    if let Some(m) = cfg.lipschitz_m {
        return Ok((m, MSource::Provided));
    }
    if let Some(m) = problem.lipschitz_constant() {
        return Ok((m, MSource::Provided));
    }
    let r0 = x0.sub(&reference.x_star).norm();
    let radius = (2.0 * r0).max(1e-3 * (1.0 + reference.x_star.norm()));
    let m = estimate_lipschitz_m(
        problem,
        &reference.x_star,
        radius,
        cfg.lipschitz_samples,
        derive_seed(cfg.master_seed, &[STREAM_LIPSCHITZ]),
    )?;
    Ok((m, MSource::Estimated))
}

/// One-record trace for a grid point whose `B₀` could not be inverted.
fn singular_stub(problem: &dyn Problem, x0: &DenseVector) -> Result<SolveTrace> {
    let residual = problem.residual(x0)?;
    let residual_norm = residual.norm();
    Ok(SolveTrace {
        records: vec![IterationRecord {
            k: 0,
            x: x0.clone(),
            residual,
            residual_norm,
            step: None,
            y: None,
            update_denominator: None,
            update_skipped: false,
        }],
        status: SolveStatus::Singular,
        final_x: x0.clone(),
        approx_jacobians: None,
        inverse_jacobians: None,
    })
}

// ── Certified near-solution runs ────────────────────────────────────

/// Specification of a certified run: start near the refined root with
/// `B₀ = s·J_*` and a perturbation radius small enough for the theorem
/// entry condition to hold with the estimated Lipschitz constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifySpec {
    pub problem: ProblemSpec,
    pub scheme: Scheme,
    pub seed: u64,
    /// Fraction of the feasibility budget consumed when auto-tuning the
    /// perturbation radius; must lie in (0, 1].
    pub margin: f64,
    /// Explicit perturbation radius; auto-tuned when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Scale of the initial Jacobian, `B₀ = s·J_*`.
    pub s: f64,
    pub solver: SolverConfig,
    #[serde(default = "default_lipschitz_samples")]
    pub lipschitz_samples: usize,
}

impl CertifySpec {
    pub fn new(problem: ProblemSpec, scheme: Scheme, seed: u64) -> Self {
        Self {
            problem,
            scheme,
            seed,
            margin: 0.3,
            delta: None,
            s: 1.0,
            solver: SolverConfig::default(),
            lipschitz_samples: default_lipschitz_samples(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CertifiedRun {
    pub scheme: Scheme,
    pub delta: f64,
    pub x0: DenseVector,
    pub reference: ReferenceSummary,
    pub trace: SolveTrace,
    pub potentials: PotentialTrace,
    pub certificate: RateCertificate,
    pub step_report: StepInequalityReport,
}

/// Runs one certified trajectory per [`CertifySpec`].
///
/// The Lipschitz constant is estimated twice: once on a coarse radius to
/// size the perturbation, then again on a ball just covering the chosen
/// trajectory region, which is the estimate the certificate records.
pub fn run_certified(spec: &CertifySpec) -> Result<CertifiedRun> {
    if !(spec.margin > 0.0 && spec.margin <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "margin must lie in (0, 1], got {}",
            spec.margin
        )));
    }
    if spec.s == 0.0 || !spec.s.is_finite() {
        return Err(Error::InvalidConfig("s must be finite and nonzero".into()));
    }
    spec.solver.validate()?;
    let problem = spec.problem.build()?;
    let reference = reference_solution(&problem, &spec.problem.newton_hint())?;
    let seed_m = derive_seed(spec.seed, &[STREAM_LIPSCHITZ]);

    let budget = |m: f64| -> f64 {
        match spec.scheme {
            Scheme::Good => spec.margin * reference.mu / (96.0 * m),
            Scheme::Bad => spec.margin * reference.mu / (56.0 * reference.kappa * m),
        }
    };

    let fallback_delta = 0.05 * (1.0 + reference.x_star.norm());
    let (delta, m_value, m_source) = match (spec.delta, problem.lipschitz_constant()) {
        (Some(d), Some(m)) => (d, m, MSource::Provided),
        (Some(d), None) => {
            let m = estimate_lipschitz_m(
                &problem,
                &reference.x_star,
                2.0 * d,
                spec.lipschitz_samples,
                seed_m,
            )?;
            (d, m, MSource::Estimated)
        }
        (None, Some(m)) => {
            let d = if m > 0.0 { budget(m) } else { fallback_delta };
            (d, m, MSource::Provided)
        }
        (None, None) => {
            let coarse = estimate_lipschitz_m(
                &problem,
                &reference.x_star,
                fallback_delta,
                spec.lipschitz_samples,
                seed_m,
            )?;
            let d1 = if coarse > 0.0 {
                budget(coarse)
            } else {
                fallback_delta
            };
            // Re-estimate on a ball that just covers the trajectory, then
            // shrink the radius once more if the estimate grew.
            let refined = estimate_lipschitz_m(
                &problem,
                &reference.x_star,
                2.0 * d1.min(fallback_delta),
                spec.lipschitz_samples,
                derive_seed(spec.seed, &[STREAM_LIPSCHITZ, 2]),
            )?;
            let m = refined.max(coarse);
            let d = if m > 0.0 {
                budget(m).min(d1)
            } else {
                fallback_delta
            };
            (d, m, MSource::Estimated)
        }
    };

    let eps = sample_unit_sphere(problem.dim(), derive_seed(spec.seed, &[STREAM_SPHERE]));
    let x0 = reference.x_star.add(&eps.scale(delta));
    let mut solver_cfg = spec.solver.clone();
    solver_cfg.snapshot_jacobians = true;

    let trace = match spec.scheme {
        Scheme::Good => {
            let b0 = reference.j_star.scale(spec.s);
            broyden_good_solve(&problem, &x0, &b0, &solver_cfg)?
        }
        Scheme::Bad => {
            let h0 = reference.j_star_inv.scale(1.0 / spec.s);
            broyden_bad_solve(&problem, &x0, &h0, &solver_cfg)?
        }
    };
    let potentials = compute_potentials(&trace, &reference, spec.scheme)?;
    let certificate = build_certificate(&potentials, &reference, m_value, m_source, spec.scheme)?;
    let step_report = check_step_inequalities(
        &problem,
        &trace,
        &potentials,
        &reference,
        m_value,
        spec.scheme,
    )?;

    Ok(CertifiedRun {
        scheme: spec.scheme,
        delta,
        x0,
        reference: ReferenceSummary {
            x_star_norm: reference.x_star.norm(),
            mu: reference.mu,
            l: reference.l,
            kappa: reference.kappa,
            m_value,
            m_source,
        },
        trace,
        potentials,
        certificate,
        step_report,
    })
}

// ── CSV / JSON emission ─────────────────────────────────────────────

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// File stem for one run, stable across executions.
pub fn run_file_name(kind: &str, scheme: Scheme, s: f64) -> String {
    format!("{kind}_{scheme}_s{s}.csv")
}

/// Writes one run as CSV with the fixed [`CSV_HEADER`] column order. The
/// bound column is empty when the run carries no certified envelope; slack
/// columns are empty past the rounding floor and on terminal records.
pub fn write_run_csv(
    path: &Path,
    potentials: &PotentialTrace,
    certificate: Option<&RateCertificate>,
    report: Option<&StepInequalityReport>,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    let bounds = certificate.and_then(|c| c.bound_curve.as_ref());
    for k in 0..potentials.len() {
        let sigma_or_tau = potentials
            .sigma
            .as_ref()
            .or(potentials.tau.as_ref())
            .and_then(|v| v.get(k).copied());
        let bound = match (bounds, k) {
            (Some(b), k) if k >= 1 && k - 1 < b.len() => Some(b[k - 1]),
            _ => None,
        };
        let slacks = report.and_then(|r| r.steps.iter().find(|s| s.k == k));
        let row = [
            k.to_string(),
            fmt(potentials.r[k]),
            fmt(potentials.lambda[k]),
            fmt(potentials.f[k]),
            fmt_opt(sigma_or_tau),
            fmt_opt(bound),
            fmt_opt(slacks.and_then(|s| s.distance_recursion)),
            fmt_opt(slacks.and_then(|s| s.r_recursion)),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Summary line for one run inside `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunSummaryJson {
    scheme: Scheme,
    s: f64,
    status: SolveStatus,
    iterations: usize,
    final_residual: f64,
    csv: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<RateCertificate>,
}

#[derive(Debug, Clone, Serialize)]
struct ExperimentSummaryJson<'a> {
    config: &'a ExperimentConfig,
    reference: &'a ReferenceSummary,
    runs: Vec<RunSummaryJson>,
}

/// Emits one CSV per run plus a `summary.json` into `dir`, creating it if
/// needed. Returns the paths written, in deterministic order.
pub fn emit_csv(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut summaries = Vec::new();
    for run in &result.runs {
        let name = run_file_name(result.config.problem.kind(), run.scheme, run.s);
        let path = dir.join(&name);
        write_run_csv(
            &path,
            &run.potentials,
            run.certificate.as_ref(),
            run.step_report.as_ref(),
        )?;
        summaries.push(RunSummaryJson {
            scheme: run.scheme,
            s: run.s,
            status: run.trace.status,
            iterations: run.trace.iterations(),
            final_residual: run
                .trace
                .records
                .last()
                .map(|r| r.residual_norm)
                .unwrap_or(f64::NAN),
            csv: name,
            certificate: run.certificate.clone(),
        });
        written.push(path);
    }
    let summary = ExperimentSummaryJson {
        config: &result.config,
        reference: &result.reference,
        runs: summaries,
    };
    let path = dir.join("summary.json");
    let mut file = std::fs::File::create(&path)?;
    file.write_all(serde_json::to_string_pretty(&summary)?.as_bytes())?;
    file.write_all(b"\n")?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_samples_have_unit_norm() {
        for seed in 0..20 {
            let v = sample_unit_sphere(7, seed);
            assert!((v.norm() - 1.0).abs() <= 1e-12);
        }
        let v = sample_unit_sphere(1, 5);
        assert!((v[0].abs() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sphere_coordinate_means_match_uniform_moments() {
        // Coordinates of a uniform sphere point have mean 0 and variance
        // 1/dim; with 10⁴ samples the mean must sit within 3 standard
        // errors of zero.
        let dim = 3;
        let samples = 10_000;
        let mut sums = vec![0.0; dim];
        for s in 0..samples {
            let v = sample_unit_sphere(dim, 10_000 + s as u64);
            for (acc, x) in sums.iter_mut().zip(v.as_slice()) {
                *acc += x;
            }
        }
        let se = 1.0 / ((dim * samples) as f64).sqrt();
        for (i, sum) in sums.iter().enumerate() {
            let mean = sum / samples as f64;
            assert!(
                mean.abs() <= 3.0 * se,
                "coordinate {i} mean {mean} exceeds 3σ = {}",
                3.0 * se
            );
        }
    }

    fn tiny_linear_config() -> ExperimentConfig {
        ExperimentConfig {
            problem: ProblemSpec::Linear { dim: 4, seed: 7 },
            init: InitSpec::Gaussian,
            b0_at: JacobianInit::AtRoot,
            schemes: vec![Scheme::Good, Scheme::Bad],
            s_grid: vec![1.0],
            master_seed: 11,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn linear_comparison_converges_in_one_step() {
        let result = run_comparison(&tiny_linear_config()).unwrap();
        assert_eq!(result.runs.len(), 2);
        for run in &result.runs {
            assert_eq!(run.trace.status, SolveStatus::Converged);
            assert_eq!(run.trace.records.len(), 2, "{} scheme", run.scheme);
        }
    }

    #[test]
    fn every_grid_point_appears_exactly_once() {
        let mut cfg = tiny_linear_config();
        cfg.s_grid = vec![0.5, 1.0, 2.0];
        let result = run_comparison(&cfg).unwrap();
        assert_eq!(result.runs.len(), 6);
        for scheme in [Scheme::Good, Scheme::Bad] {
            for &s in &cfg.s_grid {
                assert_eq!(
                    result
                        .runs
                        .iter()
                        .filter(|r| r.scheme == scheme && r.s == s)
                        .count(),
                    1
                );
            }
        }
    }

    #[test]
    fn csv_one_step_run_has_two_data_rows() {
        let result = run_comparison(&tiny_linear_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_csv(&result, dir.path()).unwrap();
        let csv = std::fs::read_to_string(&files[0]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3, "header + two data rows:\n{csv}");
    }

    #[test]
    fn csv_without_snapshots_leaves_sigma_empty() {
        let result = run_comparison(&tiny_linear_config()).unwrap();
        let run = &result.runs[0];
        let stripped = PotentialTrace {
            sigma: None,
            tau: None,
            ..run.potentials.clone()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_run_csv(&path, &stripped, None, None).unwrap();
        let csv = std::fs::read_to_string(&path).unwrap();
        for line in csv.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[4], "");
            assert!(!cols[1].is_empty());
        }
    }

    #[test]
    fn outputs_are_byte_identical_across_executions() {
        let cfg = ExperimentConfig {
            problem: ProblemSpec::Logsumexp {
                n: 5,
                m: 8,
                gamma: 1.0,
                seed: 3,
            },
            s_grid: vec![0.5, 1.0],
            master_seed: 99,
            lipschitz_samples: 50,
            ..ExperimentConfig::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let f1 = emit_csv(&run_comparison(&cfg).unwrap(), d1.path()).unwrap();
        let f2 = emit_csv(&run_comparison(&cfg).unwrap(), d2.path()).unwrap();
        assert_eq!(f1.len(), f2.len());
        for (a, b) in f1.iter().zip(&f2) {
            let ba = std::fs::read(a).unwrap();
            let bb = std::fs::read(b).unwrap();
            assert_eq!(ba, bb, "{} differs", a.display());
        }
    }

    #[test]
    fn extending_the_grid_preserves_existing_runs() {
        let mut cfg = ExperimentConfig {
            problem: ProblemSpec::Logsumexp {
                n: 4,
                m: 6,
                gamma: 1.0,
                seed: 5,
            },
            s_grid: vec![0.5, 1.0],
            master_seed: 7,
            lipschitz_samples: 50,
            ..ExperimentConfig::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        emit_csv(&run_comparison(&cfg).unwrap(), d1.path()).unwrap();
        cfg.s_grid.push(2.0);
        let d2 = tempfile::tempdir().unwrap();
        emit_csv(&run_comparison(&cfg).unwrap(), d2.path()).unwrap();
        for name in ["logsumexp_good_s0.5.csv", "logsumexp_good_s1.csv"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} perturbed by grid growth");
        }
    }

    #[test]
    fn csv_round_trip_recomputes_lambda_from_stored_x() {
        let cfg = ExperimentConfig {
            problem: ProblemSpec::Logsumexp {
                n: 4,
                m: 7,
                gamma: 1.0,
                seed: 13,
            },
            s_grid: vec![1.0],
            schemes: vec![Scheme::Good],
            master_seed: 3,
            lipschitz_samples: 50,
            ..ExperimentConfig::default()
        };
        let problem = cfg.problem.build().unwrap();
        let reference = reference_solution(&problem, &cfg.problem.newton_hint()).unwrap();
        let result = run_comparison(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_csv(&result, dir.path()).unwrap();
        let csv = std::fs::read_to_string(&files[0]).unwrap();

        // Without the verbosity flag the records omit full iterates.
        let terse = result.runs[0].trace.to_json(false);
        assert!(terse.records.iter().all(|r| r.x.is_none()));

        // Verbose trace JSON carries the full iterates.
        let verbose = result.runs[0].trace.to_json(true);
        let text = serde_json::to_string(&verbose).unwrap();
        let parsed: crate::solvers::TraceJson = serde_json::from_str(&text).unwrap();

        for (line, rec) in csv.lines().skip(1).zip(&parsed.records) {
            let cols: Vec<&str> = line.split(',').collect();
            let lambda_csv: f64 = cols[2].parse().unwrap();
            let x = DenseVector::from_vec(rec.x.clone().expect("verbose mode stores x"));
            let lambda_re = reference
                .j_star_inv
                .matvec(&problem.residual(&x).unwrap())
                .norm();
            assert!(
                (lambda_csv - lambda_re).abs() <= 1e-12 * lambda_re.max(1.0),
                "lambda mismatch: csv {lambda_csv} vs recomputed {lambda_re}"
            );
        }
    }

    #[test]
    fn certified_run_good_holds() {
        let spec = CertifySpec::new(
            ProblemSpec::Logsumexp {
                n: 5,
                m: 8,
                gamma: 1.0,
                seed: 21,
            },
            Scheme::Good,
            17,
        );
        let run = run_certified(&spec).unwrap();
        assert_eq!(run.trace.status, SolveStatus::Converged);
        assert!(run.certificate.conditions.region_holds);
        assert!(run.certificate.holds());
        assert!(run.step_report.all_satisfied());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
