//! Desk-scale training of the scalar plant from the shipped config.
//!
//! `cargo run --release --example train_scalar [epochs]` (default 3000, about half a minute).

use std::path::Path;

use incstab::cli::RunConfig;
use incstab::losses::Scope;
use incstab::sampling::{cover_box, DEFAULT_MAX_POINTS};
use incstab::trainer::train;

fn main() -> incstab::Result<()> {
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/scalar_desk.toml"))?;
    let mut hp = cfg.hyperparams();
    if let Some(e) = std::env::args().nth(1) {
        hp.epochs = e.parse().expect("epochs");
        hp.check_every = hp.check_every.min(hp.epochs);
    }
    let sys = cfg.plant.build()?;
    let xs = cover_box(&sys.state_box, cfg.sampling.eps_x, DEFAULT_MAX_POINTS)?;
    let ws = cover_box(&sys.external_box, cfg.sampling.eps_w, DEFAULT_MAX_POINTS)?;
    println!("{} states, {} inputs, {} epochs", xs.count(), ws.count(), hp.epochs);

    let tp = train(&sys, &xs, &ws, &hp)?;
    println!("full-dataset checks:");
    for r in tp.history.iter().filter(|r| r.scope == Scope::Full) {
        println!("  epoch {:>5}  total {:.3e}  L_M {:+.4}  eta {:+.3e}", r.epoch, r.total, r.l_m, r.eta);
    }
    println!("eta* {:.4e} (optimizer eta {:.4e})", tp.eta, tp.eta_trained);
    println!("LMIs PD: V {} g {}", tp.lmi.lyapunov.is_pd, tp.lmi.controller.is_pd);
    println!("convergence: {} ({})", tp.convergence.done, tp.convergence.reason);
    for x in [-1.5, -0.5, 0.0, 0.5, 1.5] {
        println!("  g({x:+.1}, 0) = {:+.4}", tp.g.forward(&[x, 0.0])?[0]);
    }
    Ok(())
}
