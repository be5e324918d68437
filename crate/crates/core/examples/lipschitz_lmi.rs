//! Slope-restricted Lipschitz LMI: PD test, log-determinant, smallest certified bound
//! and a sampled lower bound for comparison.

use incstab::lmi::{build_lmi, lmi_dim, min_certified_bound, pd_logdet, LmiContext};
use incstab::nets::{empirical_lipschitz, Activation, Mlp};
use incstab::systems::AxisBox;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> incstab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = Mlp::zeros(&[2, 40, 1], Activation::Relu)?;
    net.init_uniform(&mut rng, 1.0);
    let lambda = vec![1.0; 40];
    println!("LMI side for sizes {:?}: {}", net.layer_sizes(), lmi_dim(net.layer_sizes()));

    for bound in [0.5, 2.0, 10.0] {
        let r = pd_logdet(&build_lmi(&LmiContext::new(&net, &lambda, bound)?))?;
        println!("bound {bound:>5}: PD {} logdet {:?}", r.is_pd, r.logdet);
    }
    let certified = min_certified_bound(&net, &lambda, 1e4, 1e-6)?.expect("PD at the cap");
    let sampled = empirical_lipschitz(&net, &AxisBox::cube(2, -1.0, 1.0)?, 100_000, 9);
    println!("certified {certified:.4} >= sampled {sampled:.4}");

    // -logdet grows as the weights approach the bound.
    for t in [0.5_f64, 0.8, 0.95] {
        let scaled = net.scaled(t.sqrt());
        let r = pd_logdet(&build_lmi(&LmiContext::new(&scaled, &lambda, certified)?))?;
        println!("weights x{:.3}: -logdet {:?}", t.sqrt(), r.logdet.map(|l| -l));
    }
    Ok(())
}
