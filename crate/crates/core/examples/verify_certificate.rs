//! Exhaustive and sampled constraint enumeration on the desk-scale scalar run, then a certificate.
//!
//! Trains first; use `--release` (about a minute).

use std::path::Path;

use incstab::classk_barrier::BarrierFn;
use incstab::cli::RunConfig;
use incstab::sampling::{cover_box, DEFAULT_MAX_POINTS};
use incstab::trainer::train;
use incstab::verifier::{
    composite_lipschitz, evaluate_eta, issue_certificate, lmi_status, CertificateInputs, EnumerationMode, EvalOptions,
    HashChain,
};

fn main() -> incstab::Result<()> {
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/scalar_desk.toml"))?;
    let hp = cfg.hyperparams();
    let sys = cfg.plant.build()?;
    let xs = cover_box(&sys.state_box, cfg.sampling.eps_x, DEFAULT_MAX_POINTS)?;
    let ws = cover_box(&sys.external_box, cfg.sampling.eps_w, DEFAULT_MAX_POINTS)?;
    let tp = train(&sys, &xs, &ws, &hp)?;
    let bf = BarrierFn::new(&sys.state_box);

    let full = evaluate_eta(&sys, &tp.v, &tp.g, &xs, &ws, &hp.bundle, &bf, &EvalOptions::default())?;
    println!("{} constraints, eta* {:.4e} at {:?}", full.counts.total(), full.eta_star, full.witness);
    for f in &full.families {
        println!("  {:?}: max {:.4e} over {}", f.family, f.max, f.evaluated);
    }
    let audit = evaluate_eta(
        &sys,
        &tp.v,
        &tp.g,
        &xs,
        &ws,
        &hp.bundle,
        &bf,
        &EvalOptions {
            mode: EnumerationMode::Audit { count: 50_000, seed: 4 },
            ..EvalOptions::default()
        },
    )?;
    println!("audit of 50000 draws: eta {:.4e} (never above the exhaustive value)", audit.eta_star);

    let breakdown = composite_lipschitz(&hp.lip_targets, &hp.bundle, &sys);
    let lmi = lmi_status(&tp.v, &tp.g, &tp.lambda_v, &tp.lambda_g, &hp.lip_targets, &sys)?;
    let expected = HashChain::of(&xs, &ws, &tp.v, &tp.g);
    let cert = issue_certificate(CertificateInputs::from_evaluation(&sys.name, &full, breakdown, hp.eps, lmi, expected))?;
    println!("margin {:.4e} = eta* + {:.4} * {}, valid {}", cert.margin, cert.l_used, cert.eps, cert.valid);
    for n in &cert.notes {
        println!("note: {n}");
    }
    Ok(())
}
