//! The sub-losses on one batch, their weighted gradient, the LMI barrier and the margin loss.

use incstab::classk_barrier::ClassKBundle;
use incstab::lmi::{lmi_loss_and_grads, LmiContext};
use incstab::losses::{loss_v, total_loss, weighted_loss_grad, LossWeights, Problem, Reduction};
use incstab::nets::{Activation, LyapunovNet, Mlp};
use incstab::sampling::{cover_box, draw_batch, BatchPlan, DEFAULT_MAX_POINTS};
use incstab::systems::{make_benchmark, Benchmark};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> incstab::Result<()> {
    let sys = make_benchmark(Benchmark::Scalar);
    let xs = cover_box(&sys.state_box, 0.02, DEFAULT_MAX_POINTS)?;
    let ws = cover_box(&sys.external_box, 0.05, DEFAULT_MAX_POINTS)?;
    let prob = Problem::new(&sys, &xs, &ws, ClassKBundle::new([1e-5, 0.5, 1e-4, 0.01], [2.0; 4], 1.0)?)?;
    let batch = draw_batch(
        &xs,
        &ws,
        &BatchPlan {
            size: 256,
            diagonal_fraction: 0.1,
            nn_fraction: 0.3,
        },
        1,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut v = LyapunovNet::raw(1, &[40], Activation::Relu)?;
    v.net.init_uniform(&mut rng, 0.1);
    let mut g = Mlp::zeros(&[2, 15, 1], Activation::Relu)?;
    g.init_uniform(&mut rng, 0.1);

    let w = LossWeights::default();
    let eta = 0.0;
    let be = weighted_loss_grad(&batch, &prob, &v, &g, eta, &w, Reduction::Sum)?;
    println!("L0..L4 = {:?}", be.sub.0);
    println!("active hinges {:?} of {:?}", be.active, be.terms);
    println!("weighted sum {:.6e}, d/d eta {:.3}", total_loss(&be.sub, &w), be.d_eta);
    let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("|dL/dV| {:.3e}, |dL/dg| {:.3e}", norm(&be.d_v), norm(&be.d_g));

    let (lv, lg) = (vec![1.0; 40], vec![1.0; 15]);
    let lm = lmi_loss_and_grads(&LmiContext::new(&v.net, &lv, 1.0)?, &LmiContext::new(&g, &lg, 20.0)?, w.cl1, w.cl2)?;
    println!("L_M = {:.4} (logdet V {:.3}, logdet g {:.3})", lm.value, lm.logdet_v, lm.logdet_g);
    println!("L_v at eta 0, L 3.25, eps 0.00039: {:.7}", loss_v(eta, 3.25, 0.00039));
    Ok(())
}
