//! Comparison functions, their Lipschitz constants on a box, and the box barrier.

use incstab::classk_barrier::{barrier_eval, classk_eval, classk_lipschitz, BarrierFn, ClassK, ClassKBundle};
use incstab::systems::{make_benchmark, Benchmark};

fn main() -> incstab::Result<()> {
    let sys = make_benchmark(Benchmark::Scalar);
    let bundle = ClassKBundle::new([1e-5, 0.5, 1e-4, 0.01], [2.0; 4], 1.0)?;
    let d = sys.state_box.diameter();
    for (name, which) in [("alpha1", ClassK::A1), ("alpha2", ClassK::A2), ("alpha3", ClassK::A3), ("sigma", ClassK::Sigma)] {
        println!(
            "{name:<7} at 0.5: {:.3e}  Lipschitz on [0, {d:.3}]: {:.4}",
            classk_eval(&bundle, which, 0.5)?,
            classk_lipschitz(&bundle, which, d)
        );
    }
    let h = BarrierFn::new(&sys.state_box);
    for x in [0.0, 1.0, std::f64::consts::FRAC_PI_2, 2.0] {
        println!("h({x:.4}) = {:+.4}", barrier_eval(&h, &[x]));
    }
    println!("barrier Lipschitz {}", h.lipschitz());
    // Degree below one is rejected.
    println!("gamma 0.5: {:?}", ClassKBundle::new([1e-5, 0.5, 1e-4, 0.01], [0.5, 2.0, 2.0, 2.0], 1.0).err().map(|e| e.to_string()));
    Ok(())
}
