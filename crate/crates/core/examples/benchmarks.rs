//! The four plants: boxes, one closed-loop step and sampled Lipschitz constants.

use incstab::systems::{make_benchmark, Benchmark};
use incstab::verifier::estimate_dynamics_lipschitz;

fn main() -> incstab::Result<()> {
    for b in Benchmark::ALL {
        let sys = make_benchmark(b);
        let x = sys.state_box.center();
        let u = vec![0.1; sys.internal_input_dim];
        let next = sys.step(&x, &u)?;
        let jac = sys.input_jacobian(&x, &u)?;
        println!(
            "{:<12} n={} m={} p={} tau={} X={:?} W={:?}",
            sys.name,
            sys.state_dim,
            sys.internal_input_dim,
            sys.external_input_dim,
            sys.tau,
            sys.state_box.to_pairs(),
            sys.external_box.to_pairs()
        );
        println!("  f(center, 0.1) = {next:?}, df/du = {jac:?}");
        let est = estimate_dynamics_lipschitz(&sys, 20_000, 1);
        println!(
            "  Lipschitz: x {:.4} (configured {}), u {:.4} (configured {})",
            est.lip_x_hat, est.lip_x, est.lip_u_hat, est.lip_u
        );
        for w in &est.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
