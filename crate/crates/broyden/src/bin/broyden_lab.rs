//! Thin command-line front end over the `broyden` library: one-off solves,
//! good-versus-bad comparison sweeps, certified near-solution runs, and
//! problem-instance generation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use broyden::diagnostics::{compute_potentials, reference_solution, Scheme};
use broyden::error::{Error, Result};
use broyden::harness::{
    emit_csv, run_certified, run_comparison, sample_unit_sphere, write_run_csv, CertifySpec,
    ExperimentConfig, InitSpec, JacobianInit, ProblemSpec,
};
use broyden::linalg::{invert, DenseVector};
use broyden::problems::Problem;
use broyden::rng::{derive_seed, SplitMix64};
use broyden::solvers::{
    broyden_bad_solve, broyden_good_solve, newton_solve, SolveTrace, SolverConfig,
};

#[derive(Parser)]
#[command(
    name = "broyden-lab",
    version,
    about = "Newton/Broyden nonlinear-equation experiments with rate certification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single solver on one problem and print the trace summary.
    Solve(SolveArgs),
    /// Sweep B0 = s·J over an s-grid for the requested schemes; write CSVs.
    Compare(CompareArgs),
    /// Certified near-solution run: q_m, envelope versus observation.
    Certify(CertifyArgs),
    /// Generate a problem instance and write its JSON document.
    GenProblem(GenProblemArgs),
}

/// Problem selection shared by all subcommands.
#[derive(Args, Clone)]
struct ProblemArgs {
    /// Problem kind: logsumexp | chandrasekhar | linear.
    #[arg(long)]
    problem: Option<String>,
    /// Dimension (logsumexp n, H-equation nodes, linear dim).
    #[arg(long)]
    n: Option<usize>,
    /// Number of log-sum-exp terms.
    #[arg(long)]
    m: Option<usize>,
    /// Log-sum-exp regularization.
    #[arg(long)]
    gamma: Option<f64>,
    /// H-equation parameter in [0, 1).
    #[arg(long)]
    c: Option<f64>,
    /// Generation seed for synthetic problem data (defaults to --seed).
    #[arg(long)]
    problem_seed: Option<u64>,
}

impl ProblemArgs {
    fn given(&self) -> bool {
        self.problem.is_some()
    }

    fn to_spec(&self, fallback_seed: u64) -> Result<ProblemSpec> {
        let seed = self.problem_seed.unwrap_or(fallback_seed);
        let kind = self.problem.as_deref().unwrap_or("logsumexp");
        match kind {
            "logsumexp" => Ok(ProblemSpec::Logsumexp {
                n: self.n.unwrap_or(10),
                m: self.m.unwrap_or(30),
                gamma: self.gamma.unwrap_or(1.0),
                seed,
            }),
            "chandrasekhar" => Ok(ProblemSpec::Chandrasekhar {
                c: self.c.unwrap_or(0.9),
                n: self.n.unwrap_or(100),
            }),
            "linear" => Ok(ProblemSpec::Linear {
                dim: self.n.unwrap_or(8),
                seed,
            }),
            other => Err(Error::InvalidConfig(format!(
                "unknown problem kind `{other}` (expected logsumexp, chandrasekhar or linear)"
            ))),
        }
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Residual tolerance for convergence.
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
}

impl SolverArgs {
    fn apply(&self, cfg: &mut SolverConfig) {
        if let Some(t) = self.tol {
            cfg.tol_residual = t;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Solver: newton | good | bad.
    #[arg(long, default_value = "good")]
    method: String,
    /// Scale of the initial Jacobian, B0 = s·J.
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    /// Where B0 is evaluated: x0 | root.
    #[arg(long, default_value = "x0")]
    b0_at: String,
    /// Starting-point rule: gaussian | sphere.
    #[arg(long, default_value = "gaussian")]
    x0: String,
    /// Radius factor for the sphere rule (x0 = x* + f·‖x*‖·ε).
    #[arg(long, default_value_t = 0.1)]
    radius_factor: f64,
    /// Master seed driving x0.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory for the trace JSON and potentials CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include full iterates in the trace JSON.
    #[arg(long, default_value_t = false)]
    verbose_x: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated s-grid, e.g. 0.1,0.2,1,2.
    #[arg(long)]
    s: Option<String>,
    /// Schemes to run, comma-separated: good,bad.
    #[arg(long)]
    schemes: Option<String>,
    /// Where B0 is evaluated: x0 | root.
    #[arg(long)]
    b0_at: Option<String>,
    /// Starting-point rule: gaussian | sphere.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long)]
    radius_factor: Option<f64>,
    /// Master seed for the experiment.
    #[arg(long)]
    seed: Option<u64>,
    /// Lipschitz constant override (estimated by sampling when absent).
    #[arg(long)]
    lipschitz_m: Option<f64>,
    #[arg(long)]
    lipschitz_samples: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    /// JSON file with a full ExperimentConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for per-run CSVs and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Scheme to certify: good | bad.
    #[arg(long, default_value = "good")]
    scheme: String,
    /// Seed driving the perturbation direction and sampling.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Fraction of the feasibility budget used when auto-tuning δ.
    #[arg(long, default_value_t = 0.3)]
    margin: f64,
    /// Explicit perturbation radius (auto-tuned when omitted).
    #[arg(long)]
    delta: Option<f64>,
    /// Scale of the initial Jacobian, B0 = s·J(x*).
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    #[arg(long)]
    lipschitz_samples: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory for certificate.json and the run CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenProblemArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Generation seed (alias of --problem-seed for this subcommand).
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    match s {
        "good" => Ok(Scheme::Good),
        "bad" => Ok(Scheme::Bad),
        other => Err(Error::InvalidConfig(format!(
            "unknown scheme `{other}` (expected good or bad)"
        ))),
    }
}

fn parse_b0_at(s: &str) -> Result<JacobianInit> {
    match s {
        "x0" => Ok(JacobianInit::AtX0),
        "root" => Ok(JacobianInit::AtRoot),
        other => Err(Error::InvalidConfig(format!(
            "unknown b0 location `{other}` (expected x0 or root)"
        ))),
    }
}

fn parse_init(rule: &str, radius_factor: f64) -> Result<InitSpec> {
    match rule {
        "gaussian" => Ok(InitSpec::Gaussian),
        "sphere" => Ok(InitSpec::SpherePerturbation { radius_factor }),
        other => Err(Error::InvalidConfig(format!(
            "unknown x0 rule `{other}` (expected gaussian or sphere)"
        ))),
    }
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("bad s value `{t}`: {e}")))
        })
        .collect()
}

fn run_solve(args: &SolveArgs) -> Result<()> {
    let spec = args.problem.to_spec(args.seed)?;
    let problem = spec.build()?;
    let reference = reference_solution(&problem, &spec.newton_hint())?;

    let x0 = match parse_init(&args.x0, args.radius_factor)? {
        InitSpec::Gaussian => {
            let mut rng = SplitMix64::new(derive_seed(args.seed, &[1]));
            DenseVector::from_fn(problem.dim(), |_| rng.standard_normal())
        }
        InitSpec::SpherePerturbation { radius_factor } => {
            let eps = sample_unit_sphere(problem.dim(), derive_seed(args.seed, &[3]));
            reference
                .x_star
                .add(&eps.scale(radius_factor * reference.x_star.norm()))
        }
    };

    let mut solver_cfg = SolverConfig::default().with_snapshots();
    args.solver.apply(&mut solver_cfg);

    let (trace, scheme): (SolveTrace, Scheme) = match args.method.as_str() {
        "newton" => (newton_solve(&problem, &x0, &solver_cfg)?, Scheme::Good),
        "good" => {
            let base = match parse_b0_at(&args.b0_at)? {
                JacobianInit::AtX0 => problem.jacobian(&x0)?,
                JacobianInit::AtRoot => reference.j_star.clone(),
            };
            (
                broyden_good_solve(&problem, &x0, &base.scale(args.s), &solver_cfg)?,
                Scheme::Good,
            )
        }
        "bad" => {
            let base = match parse_b0_at(&args.b0_at)? {
                JacobianInit::AtX0 => problem.jacobian(&x0)?,
                JacobianInit::AtRoot => reference.j_star.clone(),
            };
            let h0 = invert(&base.scale(args.s))?;
            (
                broyden_bad_solve(&problem, &x0, &h0, &solver_cfg)?,
                Scheme::Bad,
            )
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected newton, good or bad)"
            )))
        }
    };

    let last = trace.records.last().expect("trace is never empty");
    println!(
        "{} on {}: {:?} after {} iterations, final residual {:.3e}",
        args.method,
        spec.kind(),
        trace.status,
        trace.iterations(),
        last.residual_norm
    );
    for r in &trace.records {
        println!(
            "  k={:<3} |F| = {:.6e}{}",
            r.k,
            r.residual_norm,
            if r.update_skipped {
                "  (update skipped)"
            } else {
                ""
            }
        );
    }

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let trace_json = serde_json::to_string_pretty(&trace.to_json(args.verbose_x))?;
        std::fs::write(dir.join("trace.json"), trace_json + "\n")?;
        let pot = compute_potentials(&trace, &reference, scheme)?;
        write_run_csv(&dir.join("potentials.csv"), &pot, None, None)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<ExperimentConfig>(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if args.problem.given() {
        cfg.problem = args.problem.to_spec(cfg.master_seed)?;
    }
    if let Some(grid) = &args.s {
        cfg.s_grid = parse_grid(grid)?;
    }
    if let Some(schemes) = &args.schemes {
        cfg.schemes = schemes
            .split(',')
            .map(|s| parse_scheme(s.trim()))
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(b0) = &args.b0_at {
        cfg.b0_at = parse_b0_at(b0)?;
    }
    if let Some(rule) = &args.x0 {
        cfg.init = parse_init(rule, args.radius_factor.unwrap_or(0.1))?;
    } else if let (Some(rf), InitSpec::SpherePerturbation { .. }) = (args.radius_factor, &cfg.init)
    {
        cfg.init = InitSpec::SpherePerturbation { radius_factor: rf };
    }
    if args.lipschitz_m.is_some() {
        cfg.lipschitz_m = args.lipschitz_m;
    }
    if let Some(samples) = args.lipschitz_samples {
        cfg.lipschitz_samples = samples;
    }
    args.solver.apply(&mut cfg.solver);

    let result = run_comparison(&cfg)?;
    println!(
        "{} (κ = {:.3e}, M = {:.3e} {:?})",
        cfg.problem.kind(),
        result.reference.kappa,
        result.reference.m_value,
        result.reference.m_source,
    );
    println!(
        "{:<8} {:>6} {:>12} {:>8} {:>14} {:>10}",
        "scheme", "s", "status", "iters", "final|F|", "certified"
    );
    for run in &result.runs {
        let last = run.trace.records.last().unwrap();
        let certified = run
            .certificate
            .as_ref()
            .map(|c| {
                if c.bound_curve.is_some() {
                    if c.holds() {
                        "yes"
                    } else {
                        "violated"
                    }
                } else {
                    "no"
                }
            })
            .unwrap_or("-");
        println!(
            "{:<8} {:>6} {:>12} {:>8} {:>14.3e} {:>10}",
            run.scheme.to_string(),
            run.s,
            format!("{:?}", run.trace.status),
            run.trace.iterations(),
            last.residual_norm,
            certified,
        );
    }
    if let Some(dir) = &args.out {
        let files = emit_csv(&result, dir)?;
        println!("wrote {} files to {}", files.len(), dir.display());
    }
    Ok(())
}

fn run_certify(args: &CertifyArgs) -> Result<()> {
    let spec = CertifySpec {
        problem: args.problem.to_spec(args.seed)?,
        scheme: parse_scheme(&args.scheme)?,
        seed: args.seed,
        margin: args.margin,
        delta: args.delta,
        s: args.s,
        solver: {
            let mut s = SolverConfig::default();
            args.solver.apply(&mut s);
            s
        },
        lipschitz_samples: args.lipschitz_samples.unwrap_or(200),
    };
    let run = run_certified(&spec)?;
    let cert = &run.certificate;
    println!(
        "{} scheme on {}: δ = {:.3e}, M = {:.3e} ({:?}), κ = {:.3e}",
        run.scheme,
        spec.problem.kind(),
        run.delta,
        cert.m_value,
        cert.m_source,
        run.reference.kappa,
    );
    println!(
        "entry condition: {} (margin {:.3e}); q_m = {}",
        if cert.conditions.region_holds {
            "holds"
        } else {
            "FAILS"
        },
        cert.conditions.region_margin,
        cert.q_m
            .map(|q| format!("{q:.6}"))
            .unwrap_or_else(|| "-".into()),
    );
    match (&cert.bound_curve, cert.first_violation) {
        (Some(_), None) => println!(
            "envelope certified and observed: {} stays below its bound at every recorded k",
            cert.observed_name
        ),
        (Some(_), Some(k)) => println!("envelope VIOLATED at k = {k}"),
        (None, _) => println!("no envelope (entry conditions unmet)"),
    }
    println!(
        "step inequalities: {} (worst slack {:.3e})",
        if run.step_report.all_satisfied() {
            "all satisfied"
        } else {
            "VIOLATIONS"
        },
        run.step_report.worst_slack(),
    );
    println!(
        "trace: {:?} after {} iterations",
        run.trace.status,
        run.trace.iterations()
    );

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let cert_json = serde_json::to_string_pretty(&cert)?;
        std::fs::write(dir.join("certificate.json"), cert_json + "\n")?;
        write_run_csv(
            &dir.join("certified_run.csv"),
            &run.potentials,
            Some(cert),
            Some(&run.step_report),
        )?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn run_gen_problem(args: &GenProblemArgs) -> Result<()> {
    let spec = args.problem.to_spec(args.seed)?;
    let problem = spec.build()?;
    let doc = problem.to_json();
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &args.out {
        Some(path) => {
            std::fs::write(path, text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => run_solve(args),
        Command::Compare(args) => run_compare(args),
        Command::Certify(args) => run_certify(args),
        Command::GenProblem(args) => run_gen_problem(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
