//! Potentials and step-wise inequality audit along one solver run.
//!
//! Runs the good scheme on the H-equation with diagnostics enabled,
//! measures `r_k`, `λ_k`, `F_k`, `σ_k` against the Newton-refined root,
//! and audits the per-step recursions the rate proofs rest on (slack ≥ 0
//! means the inequality held with room to spare).
//!
//! ```sh
//! cargo run --example trajectory_potentials
//! ```

#![allow(clippy::needless_range_loop)]

use broyden::diagnostics::{
    check_step_inequalities, compute_potentials, reference_solution, Scheme,
};
use broyden::harness::sample_unit_sphere;
use broyden::linalg::DenseVector;
use broyden::problems::{estimate_lipschitz_m, ChandrasekharProblem, Problem};
use broyden::solvers::{broyden_good_solve, SolverConfig};

fn main() -> broyden::Result<()> {
    let problem = ChandrasekharProblem::new(0.9, 40)?;
    let reference = reference_solution(&problem, &DenseVector::ones(40))?;
    println!(
        "H-equation c = 0.9, N = 40: mu = {:.4}, L = {:.4}, kappa = {:.4}",
        reference.mu, reference.l, reference.kappa
    );

    let radius = 0.05 * reference.x_star.norm();
    let eps = sample_unit_sphere(40, 8);
    let x0 = reference.x_star.add(&eps.scale(radius));
    let b0 = problem.jacobian(&x0)?;
    let cfg = SolverConfig::default().with_snapshots();
    let trace = broyden_good_solve(&problem, &x0, &b0, &cfg)?;
    println!(
        "good scheme from B0 = J(x0): {:?} in {} steps\n",
        trace.status,
        trace.iterations()
    );

    let potentials = compute_potentials(&trace, &reference, Scheme::Good)?;
    // Sample the Lipschitz ratio on a ball that just covers the trajectory;
    // sampling far outside it would misjudge the local constant.
    let m = estimate_lipschitz_m(&problem, &reference.x_star, 2.0 * radius, 1000, 3)?;
    let report =
        check_step_inequalities(&problem, &trace, &potentials, &reference, m, Scheme::Good)?;
    println!("sampled Lipschitz constant M = {m:.4}\n");

    let sigma = potentials.sigma.as_ref().unwrap();
    println!(
        "{:>3} {:>13} {:>13} {:>13} {:>10} {:>13} {:>13}",
        "k", "r", "lambda", "F", "sigma", "slack(sigma)", "slack(r)"
    );
    for k in 0..potentials.len() {
        let slacks = report.steps.iter().find(|s| s.k == k);
        println!(
            "{:>3} {:>13.4e} {:>13.4e} {:>13.4e} {:>10.4} {:>13} {:>13}",
            k,
            potentials.r[k],
            potentials.lambda[k],
            potentials.f[k],
            sigma[k],
            slacks
                .and_then(|s| s.distance_recursion)
                .map(|v| format!("{v:+.2e}"))
                .unwrap_or_else(|| "-".into()),
            slacks
                .and_then(|s| s.r_recursion)
                .map(|v| format!("{v:+.2e}"))
                .unwrap_or_else(|| "-".into()),
        );
    }
    println!(
        "\nstep inequalities {} (worst slack {:+.3e}); checks stop at the 1e-14 rounding floor",
        if report.all_satisfied() {
            "all satisfied"
        } else {
            "VIOLATED"
        },
        report.worst_slack()
    );
    Ok(())
}
