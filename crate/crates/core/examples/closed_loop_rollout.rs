//! Closed-loop rollouts of the desk-scale scalar controller: paired trajectories,
//! contraction over random pairs and an invariance sweep.
//!
//! Trains first; use `--release` (about a minute).

use std::path::Path;

use incstab::cli::RunConfig;
use incstab::rollout::{contraction_study, divergence_metrics, invariance_sweep, simulate, Signal};
use incstab::sampling::{cover_box, DEFAULT_MAX_POINTS};
use incstab::trainer::train;

fn main() -> incstab::Result<()> {
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/scalar_desk.toml"))?;
    let hp = cfg.hyperparams();
    let sys = cfg.plant.build()?;
    let xs = cover_box(&sys.state_box, cfg.sampling.eps_x, DEFAULT_MAX_POINTS)?;
    let ws = cover_box(&sys.external_box, cfg.sampling.eps_w, DEFAULT_MAX_POINTS)?;
    let tp = train(&sys, &xs, &ws, &hp)?;

    for (name, sig) in [
        ("constant 0.2", Signal::Constant { value: 0.2 }),
        ("-sin(k)", Signal::Sine { amplitude: -1.0 }),
        ("cos^2(k/2)", Signal::CosSquared),
    ] {
        let w = sig.generate(2000, &sys.external_box);
        let a = simulate(&sys, &tp.g, &[-1.0], &w)?;
        let b = simulate(&sys, &tp.g, &[1.0], &w)?;
        let d = divergence_metrics(&a, &b, &tp.v)?;
        println!(
            "{name:<13} gap {:.3} -> {:.3e}, V non-increasing {:.3}, exits {}",
            d.gap[0],
            d.gap[2000],
            d.v_nonincreasing_fraction(),
            a.exits.len() + b.exits.len()
        );
        assert!(a.replays(&sys));
    }
    let c = contraction_study(&sys, &tp.g, &tp.v, 100, 2000, 1)?;
    println!("median gap(2000)/gap(0) over {} pairs: {:.3e}", c.pairs, c.median_ratio);
    let inv = invariance_sweep(&sys, &tp.g, 1000, 2000, 2)?;
    println!("{} of {} rollouts left the state box", inv.trajectories_with_exits, inv.rollouts);
    Ok(())
}
