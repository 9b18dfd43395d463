//! Certified superlinear envelopes on near-solution runs.
//!
//! Starting close enough to the refined root with `B0 = J(x*)`, the entry
//! conditions of the rate theory hold and the solver's trajectory must stay
//! below an explicit envelope: `λ_k ≤ [q_m²/k]^{k/2} λ_0` for the good
//! scheme and `F_k ≤ [10 q_m²/(k κ²)]^{k/2} F_0` for the bad one. This
//! example auto-tunes the perturbation radius, runs both schemes, and
//! prints the observed quantity against its bound at every iteration.
//!
//! ```sh
//! cargo run --example certify_rates
//! ```

use broyden::diagnostics::Scheme;
use broyden::harness::{run_certified, CertifySpec, ProblemSpec};

fn main() -> broyden::Result<()> {
    let problem = ProblemSpec::Logsumexp {
        n: 8,
        m: 16,
        gamma: 1.0,
        seed: 11,
    };

    for scheme in [Scheme::Good, Scheme::Bad] {
        let spec = CertifySpec::new(problem.clone(), scheme, 5);
        let run = run_certified(&spec)?;
        let cert = &run.certificate;

        println!(
            "{scheme} scheme: delta = {:.3e}, kappa = {:.3e}, M = {:.3e} ({:?})",
            run.delta, run.reference.kappa, cert.m_value, cert.m_source
        );
        println!(
            "entry condition margin {:+.3e}, q_m = {:.6}",
            cert.conditions.region_margin,
            cert.q_m.expect("certified run has q_m"),
        );

        let bounds = cert.bound_curve.as_ref().expect("entry conditions hold");
        println!(
            "{:>3} {:>16} {:>16}",
            "k",
            cert.observed_name.as_str(),
            "bound"
        );
        println!("{:>3} {:>16.6e} {:>16}", 0, cert.observed_curve[0], "-");
        for k in 1..cert.observed_curve.len() {
            println!(
                "{:>3} {:>16.6e} {:>16.6e}",
                k,
                cert.observed_curve[k],
                bounds[k - 1]
            );
        }
        match cert.first_violation {
            None => println!("envelope holds at every recorded iteration\n"),
            Some(k) => println!("envelope violated at k = {k}\n"),
        }
    }
    Ok(())
}
