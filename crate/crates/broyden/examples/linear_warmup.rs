//! Warm-up on a linear system: started from the exact Jacobian, Newton and
//! both Broyden schemes must land on the solution in a single step.
//!
//! ```sh
//! cargo run --example linear_warmup
//! ```

use broyden::linalg::{invert, DenseVector};
use broyden::problems::LinearSystem;
use broyden::rng::SplitMix64;
use broyden::solvers::{broyden_bad_solve, broyden_good_solve, newton_solve, SolverConfig};

fn main() -> broyden::Result<()> {
    let system = LinearSystem::generate(6, 2024);
    let mut rng = SplitMix64::new(1);
    let x0 = DenseVector::from_fn(6, |_| 5.0 * rng.uniform_symmetric());
    let cfg = SolverConfig::default();

    let newton = newton_solve(&system, &x0, &cfg)?;
    let good = broyden_good_solve(&system, &x0, system.matrix(), &cfg)?;
    let bad = broyden_bad_solve(&system, &x0, &invert(system.matrix())?, &cfg)?;

    println!(
        "linear system, dim 6, start {:.2} away from the solution\n",
        x0.norm()
    );
    println!(
        "{:<22} {:>12} {:>8} {:>14}",
        "solver", "status", "steps", "final |F|"
    );
    for (name, trace) in [
        ("newton", &newton),
        ("good (B0 = A)", &good),
        ("bad (H0 = A^-1)", &bad),
    ] {
        println!(
            "{:<22} {:>12} {:>8} {:>14.3e}",
            name,
            format!("{:?}", trace.status),
            trace.iterations(),
            trace.records.last().unwrap().residual_norm,
        );
    }

    assert!(newton.iterations() == 1 && good.iterations() == 1 && bad.iterations() == 1);
    println!("\nall three solvers finished in exactly one step");
    Ok(())
}
