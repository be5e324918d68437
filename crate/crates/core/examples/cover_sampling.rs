//! Grid covers of a box, the covering audit and a training batch.

use incstab::sampling::{cover_box, covering_audit, draw_batch, grid_count, BatchPlan, DEFAULT_MAX_POINTS};
use incstab::systems::{make_benchmark, Benchmark};

fn main() -> incstab::Result<()> {
    let sys = make_benchmark(Benchmark::Manipulator);
    for eps in [0.1, 0.05, 0.02] {
        let xs = cover_box(&sys.state_box, eps, DEFAULT_MAX_POINTS)?;
        let audit = covering_audit(&xs, 100_000, 7);
        println!(
            "eps {eps:<5} predicted {:>5} points, got {:>5}; audit passed {} (worst {:.5})",
            grid_count(&sys.state_box, eps),
            xs.count(),
            audit.passed,
            audit.worst_distance
        );
    }

    let xs = cover_box(&sys.state_box, 0.05, DEFAULT_MAX_POINTS)?;
    let ws = cover_box(&sys.external_box, 0.1, DEFAULT_MAX_POINTS)?;
    let plan = BatchPlan {
        size: 8,
        diagonal_fraction: 0.25,
        nn_fraction: 0.25,
    };
    for t in draw_batch(&xs, &ws, &plan, 3)? {
        println!("{:?} x={:?} xhat={:?} w={:?}", t, xs.point(t.q), xs.point(t.r), ws.point(t.wq));
    }
    println!("first rows of the state csv:");
    for line in xs.to_csv("x").lines().take(3) {
        println!("  {line}");
    }
    Ok(())
}
