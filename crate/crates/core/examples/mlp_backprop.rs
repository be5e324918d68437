//! Forward and reverse passes of a small network, checked against finite differences,
//! and both Lyapunov candidate forms.

use incstab::nets::{Activation, LyapunovNet, Mlp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> incstab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = Mlp::zeros(&[3, 15, 2], Activation::Tanh)?;
    net.init_uniform(&mut rng, 1.0);
    let x = [0.3, -0.2, 0.9];
    let y = net.forward(&x)?;
    println!("y = {y:?}");

    // d(y0 - 2 y1)/d params
    let seed = [1.0, -2.0];
    let tape = net.forward_tape(&x);
    let mut grad = vec![0.0; net.num_params()];
    let mut gin = vec![0.0; 3];
    net.backward(&tape, &seed, &mut grad, Some(&mut gin));
    let obj = |n: &Mlp| {
        let o = n.forward(&x).unwrap();
        o[0] - 2.0 * o[1]
    };
    let mut worst = 0.0_f64;
    for i in 0..net.num_params() {
        let h = 1e-6;
        let mut a = net.clone();
        a.params_mut()[i] += h;
        let mut b = net.clone();
        b.params_mut()[i] -= h;
        let fd = (obj(&a) - obj(&b)) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs());
    }
    println!("{} parameters, max |backprop - fd| = {worst:.2e}, d/dx = {gin:?}", net.num_params());

    let mut raw = LyapunovNet::raw(2, &[40], Activation::Relu)?;
    raw.net.init_uniform(&mut rng, 0.5);
    let mut sq = LyapunovNet::squared(2, &[40], 4, Activation::Tanh)?;
    sq.net.init_uniform(&mut rng, 0.5);
    let (a, b) = ([0.1, -0.2], [0.3, 0.05]);
    println!("raw V(a,b) = {:.5}, V(a,a) = {:.5}", raw.eval(&a, &b)?, raw.eval(&a, &a)?);
    println!("squared V(a,b) = {:.5}, V(a,a) = {:.5}", sq.eval(&a, &b)?, sq.eval(&a, &a)?);

    let doc = net.weights_doc(None);
    let back = Mlp::from_doc(&doc)?;
    println!("weights json round trip exact: {}, hash {}", back == net, &doc.content_hash[..16]);
    Ok(())
}
