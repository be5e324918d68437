//! Margins of the four published (eta, L, eps) triples and the composite constant
//! recomputed from the stated targets.

use incstab::classk_barrier::ClassKBundle;
use incstab::systems::{make_benchmark, Benchmark};
use incstab::verifier::{composite_lipschitz, published_cases, published_certificate, LipTargets};

fn main() -> incstab::Result<()> {
    for case in published_cases() {
        let (lc, k3) = match case.system {
            "scalar" => (20.0, 1e-4),
            "manipulator" => (40.0, 1e-4),
            "jet" => (10.0, 1e-3),
            _ => (40.0, 1e-3),
        };
        let sys = make_benchmark(Benchmark::parse(case.system)?);
        let t = LipTargets {
            lyapunov: 1.0,
            controller: lc,
            barrier: 1.0,
        };
        let br = composite_lipschitz(&t, &ClassKBundle::new([1e-5, 0.5, k3, 0.01], [2.0; 4], 1.0)?, &sys);
        let cert = published_certificate(&case, case.eps, br)?;
        println!(
            "{:<12} eta {:+.4} L {:.3} eps {:<7} margin {:+.7} valid {:<5} composite {:.4} (terms {:.4?})",
            case.system, case.eta, case.l, case.eps, cert.margin, cert.valid, br.max, br.terms
        );
        for n in &cert.notes {
            println!("  note: {n}");
        }
        if case.margin_eps != case.eps {
            let alt = published_certificate(&case, case.margin_eps, br)?;
            println!("  at eps {}: margin {:+.7} valid {}", case.margin_eps, alt.margin, alt.valid);
        }
    }
    Ok(())
}
