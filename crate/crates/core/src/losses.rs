//! Hinge sub-losses over sampled tuples, their weighted sum and the margin loss.
//!
//! For a tuple `(x, xhat, w, what)` with `d = |x - xhat|`:
//!
//! ```text
//! L0: max(0, V(x, x))                                   (diagonal tuples)
//! L1: max(0, -V(x, xhat) + k1 d^g1 - eta)                (off-diagonal)
//! L2: max(0,  V(x, xhat) - k2 d^g2 - eta)
//! L3: max(0,  V(f, fhat) - V(x, xhat) + k3 d^g3 - kw |w - what|^gw - eta)
//! L4: max(0,  h(f) - kh h(x) - eta)                      (every tuple, on (x, w))
//! ```
//!
//! with `f = f(x, g(x, w))`. Gradients reach the controller through the
//! plant's input Jacobian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classk_barrier::{BarrierFn, ClassK, ClassKBundle};
use crate::error::{Error, Result};
use crate::nets::{LyapunovNet, Mlp, Tape, VWork};
use crate::sampling::{BatchTuple, CoverDataset};
use crate::systems::SystemSpec;

/// Tuples per work unit. Fixed so reductions do not depend on the thread count.
pub const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub cl1: f64,
    pub cl2: f64,
    /// Weight of the margin loss.
    #[serde(default = "one")]
    pub cv: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            c0: 1.0,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            c4: 1.0,
            cl1: 1.0,
            cl2: 1.0,
            cv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c0, self.c1, self.c2, self.c3, self.c4, self.cl1, self.cl2, self.cv];
        if all.iter().any(|&c| !(c.is_finite() && c > 0.0)) {
            return Err(Error::invalid(format!("loss weights must be positive, got {all:?}")));
        }
        Ok(())
    }

    pub fn sub(&self) -> [f64; 5] {
        [self.c0, self.c1, self.c2, self.c3, self.c4]
    }

    pub fn scaled(&self, t: f64) -> LossWeights {
        LossWeights {
            c0: t * self.c0,
            c1: t * self.c1,
            c2: t * self.c2,
            c3: t * self.c3,
            c4: t * self.c4,
            cl1: t * self.cl1,
            cl2: t * self.cl2,
            cv: t * self.cv,
        }
    }
}

/// How hinge terms are aggregated over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// `L0 .. L4`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SubLosses(pub [f64; 5]);

impl SubLosses {
    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// `sum_i c_i L_i`.
pub fn total_loss(sub: &SubLosses, w: &LossWeights) -> f64 {
    let c = w.sub();
    let mut acc = 0.0;
    for i in 0..5 {
        acc += c[i] * sub.0[i];
    }
    acc
}

/// `max(0, L eps + eta)`.
pub fn loss_v(eta: f64, l: f64, eps: f64) -> f64 {
    (l * eps + eta).max(0.0)
}

/// Which pass produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Batch,
    Full,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub scope: Scope,
    pub sub: SubLosses,
    pub total: f64,
    pub l_m: f64,
    pub l_v: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub wall_time: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch,scope,L0,L1,L2,L3,L4,L_M,L_v,total,eta,wall_time";

impl LossReport {
    pub fn csv_row(&self) -> String {
        let s = &self.sub.0;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            match self.scope {
                Scope::Batch => "batch",
                Scope::Full => "full",
            },
            s[0],
            s[1],
            s[2],
            s[3],
            s[4],
            self.l_m,
            self.l_v,
            self.total,
            self.eta,
            self.wall_time.map(|t| format!("{t:.3}")).unwrap_or_default()
        )
    }
}

/// The plant, datasets and comparison functions shared by every loss evaluation.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub sys: &'a SystemSpec,
    pub xs: &'a CoverDataset,
    pub ws: &'a CoverDataset,
    pub bundle: ClassKBundle,
    pub barrier: BarrierFn,
}

impl<'a> Problem<'a> {
    pub fn new(sys: &'a SystemSpec, xs: &'a CoverDataset, ws: &'a CoverDataset, bundle: ClassKBundle) -> Result<Self> {
        if xs.dim() != sys.state_dim || ws.dim() != sys.external_input_dim {
            return Err(Error::invalid(format!(
                "datasets have dimensions {} and {}, plant expects {} and {}",
                xs.dim(),
                ws.dim(),
                sys.state_dim,
                sys.external_input_dim
            )));
        }
        bundle.validate()?;
        Ok(Problem {
            sys,
            xs,
            ws,
            bundle,
            barrier: BarrierFn::new(&sys.state_box),
        })
    }
}

/// Sub-losses and the gradient of `sum_i s_i L_i` for seeds `s_i`.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub sub: SubLosses,
    /// Number of active hinges per sub-loss.
    pub active: [usize; 5],
    /// Number of terms per sub-loss.
    pub terms: [usize; 5],
    pub d_v: Vec<f64>,
    pub d_g: Vec<f64>,
    pub d_eta: f64,
}

struct Work {
    v: VWork,
    tq: Tape,
    tr: Tape,
    xin: Vec<f64>,
    uq: Vec<f64>,
    ur: Vec<f64>,
    fq: Vec<f64>,
    fr: Vec<f64>,
    gfq: Vec<f64>,
    gfr: Vec<f64>,
    guq: Vec<f64>,
    gur: Vec<f64>,
    jac: Vec<f64>,
    hg: Vec<f64>,
}

impl Work {
    fn new(n: usize, m: usize) -> Self {
        Work {
            v: VWork::default(),
            tq: Tape::default(),
            tr: Tape::default(),
            xin: Vec::new(),
            uq: vec![0.0; m],
            ur: vec![0.0; m],
            fq: vec![0.0; n],
            fr: vec![0.0; n],
            gfq: vec![0.0; n],
            gfr: vec![0.0; n],
            guq: vec![0.0; m],
            gur: vec![0.0; m],
            jac: vec![0.0; n * m],
            hg: vec![0.0; n],
        }
    }
}

#[inline]
pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (p, q) in a.iter().zip(b) {
        let d = p - q;
        acc += d * d;
    }
    acc.sqrt()
}

fn closed_loop(p: &Problem<'_>, g: &Mlp, x: &[f64], w: &[f64], tape: &mut Tape, xin: &mut Vec<f64>, u: &mut [f64], f: &mut [f64]) -> Result<()> {
    xin.clear();
    xin.extend_from_slice(x);
    xin.extend_from_slice(w);
    g.forward_tape_into(xin, tape);
    u.copy_from_slice(&tape.output);
    p.sys.step_into(x, u, f);
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "plant '{}' produced a non-finite state at x={x:?}, u={u:?}",
            p.sys.name
        )));
    }
    Ok(())
}

/// Pulls `grad_f` back through the plant and the controller.
fn pull_back(p: &Problem<'_>, g: &Mlp, x: &[f64], u: &[f64], tape: &Tape, grad_f: &[f64], jac: &mut [f64], grad_u: &mut [f64], d_g: &mut [f64]) {
    let (n, m) = (p.sys.state_dim, p.sys.internal_input_dim);
    p.sys.input_jacobian_into(x, u, jac);
    for j in 0..m {
        let mut s = 0.0;
        for i in 0..n {
            s += jac[i * m + j] * grad_f[i];
        }
        grad_u[j] = s;
    }
    g.backward(tape, grad_u, d_g, None);
}

fn eval_chunk(
    p: &Problem<'_>,
    v: &LyapunovNet,
    g: &Mlp,
    eta: f64,
    seeds: [f64; 5],
    want_grad: bool,
    tuples: &[BatchTuple],
) -> Result<BatchEval> {
    let (n, m) = (p.sys.state_dim, p.sys.internal_input_dim);
    let mut out = BatchEval {
        sub: SubLosses::default(),
        active: [0; 5],
        terms: [0; 5],
        d_v: vec![0.0; if want_grad { v.net.num_params() } else { 0 }],
        d_g: vec![0.0; if want_grad { g.num_params() } else { 0 }],
        d_eta: 0.0,
    };
    let mut wk = Work::new(n, m);
    let b = &p.bundle;
    for t in tuples {
        let x = p.xs.point(t.q);
        let xh = p.xs.point(t.r);
        let w = p.ws.point(t.wq);
        let wh = p.ws.point(t.wr);

        closed_loop(p, g, x, w, &mut wk.tq, &mut wk.xin, &mut wk.uq, &mut wk.fq)?;

        // L4 on (x, w)
        out.terms[4] += 1;
        let hf = p.barrier.eval_grad(&wk.fq, &mut wk.hg);
        let e4 = hf - b.k_h * p.barrier.eval(x) - eta;
        if e4 > 0.0 {
            out.sub.0[4] += e4;
            out.active[4] += 1;
            if want_grad {
                out.d_eta -= seeds[4];
                let gf: Vec<f64> = wk.hg.iter().map(|h| seeds[4] * h).collect();
                pull_back(p, g, x, &wk.uq, &wk.tq, &gf, &mut wk.jac, &mut wk.guq, &mut out.d_g);
            }
        }

        if t.is_diagonal() {
            out.terms[0] += 1;
            let vd = v.eval_fast(x, x, &mut wk.v);
            if vd > 0.0 {
                out.sub.0[0] += vd;
                out.active[0] += 1;
                if want_grad {
                    v.eval_backward(x, x, seeds[0], &mut out.d_v, None, None, &mut wk.v);
                }
            }
            continue;
        }

        out.terms[1] += 1;
        out.terms[2] += 1;
        out.terms[3] += 1;
        let d = euclid(x, xh);
        let vxx = v.eval_fast(x, xh, &mut wk.v);
        let mut seed_vxx = 0.0;

        let e1 = -vxx + b.eval_unchecked(ClassK::A1, d) - eta;
        if e1 > 0.0 {
            out.sub.0[1] += e1;
            out.active[1] += 1;
            seed_vxx -= seeds[1];
            out.d_eta -= seeds[1];
        }
        let e2 = vxx - b.eval_unchecked(ClassK::A2, d) - eta;
        if e2 > 0.0 {
            out.sub.0[2] += e2;
            out.active[2] += 1;
            seed_vxx += seeds[2];
            out.d_eta -= seeds[2];
        }

        closed_loop(p, g, xh, wh, &mut wk.tr, &mut wk.xin, &mut wk.ur, &mut wk.fr)?;
        let vff = v.eval_fast(&wk.fq, &wk.fr, &mut wk.v);
        let e3 = vff - vxx + b.eval_unchecked(ClassK::A3, d) - b.eval_unchecked(ClassK::Sigma, euclid(w, wh)) - eta;
        if e3 > 0.0 {
            out.sub.0[3] += e3;
            out.active[3] += 1;
            seed_vxx -= seeds[3];
            out.d_eta -= seeds[3];
            if want_grad {
                wk.gfq.iter_mut().for_each(|v| *v = 0.0);
                wk.gfr.iter_mut().for_each(|v| *v = 0.0);
                let (fq, fr) = (wk.fq.clone(), wk.fr.clone());
                v.eval_backward(&fq, &fr, seeds[3], &mut out.d_v, Some(&mut wk.gfq), Some(&mut wk.gfr), &mut wk.v);
                let gfq = wk.gfq.clone();
                pull_back(p, g, x, &wk.uq, &wk.tq, &gfq, &mut wk.jac, &mut wk.guq, &mut out.d_g);
                let gfr = wk.gfr.clone();
                pull_back(p, g, xh, &wk.ur, &wk.tr, &gfr, &mut wk.jac, &mut wk.gur, &mut out.d_g);
            }
        }
        if want_grad && seed_vxx != 0.0 {
            v.eval_backward(x, xh, seed_vxx, &mut out.d_v, None, None, &mut wk.v);
        }
    }
    Ok(out)
}

fn reduce(parts: Vec<BatchEval>, want_grad: bool, nv: usize, ng: usize) -> BatchEval {
    let mut acc = BatchEval {
        sub: SubLosses::default(),
        active: [0; 5],
        terms: [0; 5],
        d_v: vec![0.0; if want_grad { nv } else { 0 }],
        d_g: vec![0.0; if want_grad { ng } else { 0 }],
        d_eta: 0.0,
    };
    for p in parts {
        for i in 0..5 {
            acc.sub.0[i] += p.sub.0[i];
            acc.active[i] += p.active[i];
            acc.terms[i] += p.terms[i];
        }
        acc.d_v.iter_mut().zip(&p.d_v).for_each(|(a, b)| *a += b);
        acc.d_g.iter_mut().zip(&p.d_g).for_each(|(a, b)| *a += b);
        acc.d_eta += p.d_eta;
    }
    acc
}

fn count_terms(batch: &[BatchTuple]) -> [usize; 5] {
    let diag = batch.iter().filter(|t| t.is_diagonal()).count();
    let off = batch.len() - diag;
    [diag, off, off, off, batch.len()]
}

fn mean_factors(batch: &[BatchTuple], reduction: Reduction) -> [f64; 5] {
    match reduction {
        Reduction::Sum => [1.0; 5],
        Reduction::Mean => count_terms(batch).map(|c| if c == 0 { 0.0 } else { 1.0 / c as f64 }),
    }
}

/// Evaluates `L0 .. L4` on a batch.
pub fn sub_losses(
    batch: &[BatchTuple],
    p: &Problem<'_>,
    v: &LyapunovNet,
    g: &Mlp,
    eta: f64,
    reduction: Reduction,
) -> Result<SubLosses> {
    Ok(evaluate(batch, p, v, g, eta, [1.0; 5], reduction, false)?.sub)
}

/// Sub-losses plus the gradient of `sum_i c_i L_i` with respect to both
/// networks and `eta`.
pub fn weighted_loss_grad(
    batch: &[BatchTuple],
    p: &Problem<'_>,
    v: &LyapunovNet,
    g: &Mlp,
    eta: f64,
    weights: &LossWeights,
    reduction: Reduction,
) -> Result<BatchEval> {
    evaluate(batch, p, v, g, eta, weights.sub(), reduction, true)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    batch: &[BatchTuple],
    p: &Problem<'_>,
    v: &LyapunovNet,
    g: &Mlp,
    eta: f64,
    c: [f64; 5],
    reduction: Reduction,
    want_grad: bool,
) -> Result<BatchEval> {
    if v.state_dim() != p.sys.state_dim
        || g.input_dim() != p.sys.state_dim + p.sys.external_input_dim
        || g.output_dim() != p.sys.internal_input_dim
    {
        return Err(Error::invalid("network shapes do not match the plant"));
    }
    let mf = mean_factors(batch, reduction);
    let seeds = [c[0] * mf[0], c[1] * mf[1], c[2] * mf[2], c[3] * mf[3], c[4] * mf[4]];
    let parts: Result<Vec<BatchEval>> = batch
        .par_chunks(CHUNK)
        .map(|ch| eval_chunk(p, v, g, eta, seeds, want_grad, ch))
        .collect();
    let mut out = reduce(parts?, want_grad, v.net.num_params(), g.num_params());
    for i in 0..5 {
        out.sub.0[i] *= mf[i];
    }
    if want_grad {
        for (name, bad) in [
            ("Lyapunov network", out.d_v.iter().any(|x| !x.is_finite())),
            ("controller network", out.d_g.iter().any(|x| !x.is_finite())),
            ("eta", !out.d_eta.is_finite()),
        ] {
            if bad {
                return Err(Error::numeric(format!("non-finite gradient in the {name}")));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;
    use crate::sampling::{cover_box, draw_batch, BatchPlan, DEFAULT_MAX_POINTS};
    use crate::systems::{make_benchmark, AxisBox, Benchmark};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle() -> ClassKBundle {
        ClassKBundle::new([1e-5, 0.5, 1e-4, 0.01], [2.0; 4], 1.0).unwrap()
    }

    fn zero_nets(n: usize, p: usize, m: usize) -> (LyapunovNet, Mlp) {
        (
            LyapunovNet::raw(n, &[4], Activation::Relu).unwrap(),
            Mlp::zeros(&[n + p, 3, m], Activation::Relu).unwrap(),
        )
    }

    #[test]
    fn zero_v_diagonal_batch_has_no_l0() {
        let sys = make_benchmark(Benchmark::Scalar);
        let xs = cover_box(&sys.state_box, 0.3, DEFAULT_MAX_POINTS).unwrap();
        let ws = cover_box(&sys.external_box, 0.5, DEFAULT_MAX_POINTS).unwrap();
        let p = Problem::new(&sys, &xs, &ws, bundle()).unwrap();
        let (v, g) = zero_nets(1, 1, 1);
        let batch: Vec<BatchTuple> = (0..xs.count()).map(|q| BatchTuple { q, r: q, wq: 0, wr: 0 }).collect();
        let s = sub_losses(&batch, &p, &v, &g, 0.0, Reduction::Sum).unwrap();
        assert_eq!(s.0[0], 0.0);
    }

    #[test]
    fn single_pair_hand_values() {
        let sys = make_benchmark(Benchmark::Scalar);
        let bx = sys.state_box.clone();
        let xs = CoverDataset::from_points(&[vec![1.0], vec![0.0]], 0.1, bx).unwrap();
        let ws = CoverDataset::from_points(&[vec![0.0]], 0.1, sys.external_box.clone()).unwrap();
        let p = Problem::new(&sys, &xs, &ws, bundle()).unwrap();
        let (v, g) = zero_nets(1, 1, 1);
        let s = sub_losses(&[BatchTuple { q: 0, r: 1, wq: 0, wr: 0 }], &p, &v, &g, 0.0, Reduction::Sum).unwrap();
        assert_eq!(s.0[1], 1e-5);
        assert_eq!(s.0[2], 0.0);
        // f(0, 0) = 0, so the barrier term vanishes at the center
        let s = sub_losses(&[BatchTuple { q: 1, r: 1, wq: 0, wr: 0 }], &p, &v, &g, 0.0, Reduction::Sum).unwrap();
        assert_eq!(s.0[4], 0.0);
    }

    #[test]
    fn total_and_margin_arithmetic() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&SubLosses::default(), &w), 0.0);
        let w2 = LossWeights { c1: 0.5, ..w };
        assert_eq!(total_loss(&SubLosses([0.0, 2.0, 0.0, 0.0, 0.0]), &w2), 1.0);
        let s = SubLosses([0.3, 1.7, 2.2, 0.01, 5.0]);
        assert_eq!(total_loss(&s, &w2.scaled(2.0)), 2.0 * total_loss(&s, &w2));
        assert_eq!(loss_v(-0.0015, 3.25, 0.00039), 0.0);
        assert!((loss_v(0.0, 3.25, 0.00039) - 0.0012675).abs() < 1e-15);
        assert_eq!(loss_v(0.02, 3.25, 0.0), 0.02);
        assert_eq!(loss_v(-0.02, 3.25, 0.0), 0.0);
    }

    fn random_setup(seed: u64) -> (crate::systems::SystemSpec, CoverDataset, CoverDataset) {
        let sys = make_benchmark(Benchmark::Manipulator);
        let xs = cover_box(&sys.state_box, 0.2, DEFAULT_MAX_POINTS).unwrap();
        let ws = cover_box(&sys.external_box, 0.2, DEFAULT_MAX_POINTS).unwrap();
        let _ = seed;
        (sys, xs, ws)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (sys, xs, ws) = random_setup(0);
        let p = Problem::new(&sys, &xs, &ws, bundle()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut v = LyapunovNet::raw(2, &[6], Activation::Tanh).unwrap();
        v.net.init_uniform(&mut rng, 1.0);
        let mut g = Mlp::zeros(&[3, 5, 1], Activation::Tanh).unwrap();
        g.init_uniform(&mut rng, 1.0);
        let plan = BatchPlan {
            size: 12,
            diagonal_fraction: 0.25,
            nn_fraction: 0.25,
        };
        let batch = draw_batch(&xs, &ws, &plan, 4).unwrap();
        let weights = LossWeights {
            c0: 1.3,
            c1: 0.7,
            c2: 1.1,
            c3: 2.0,
            c4: 0.9,
            ..LossWeights::default()
        };
        let eta = -1.0;
        for red in [Reduction::Sum, Reduction::Mean] {
            let ev = weighted_loss_grad(&batch, &p, &v, &g, eta, &weights, red).unwrap();
            let f = |v: &LyapunovNet, g: &Mlp, eta: f64| total_loss(&sub_losses(&batch, &p, v, g, eta, red).unwrap(), &weights);
            let h = 1e-6;
            for i in 0..v.net.num_params() {
                let mut a = v.clone();
                a.net.params_mut()[i] += h;
                let mut b = v.clone();
                b.net.params_mut()[i] -= h;
                let fd = (f(&a, &g, eta) - f(&b, &g, eta)) / (2.0 * h);
                assert!((fd - ev.d_v[i]).abs() <= 1e-6 * fd.abs().max(1e-2), "v {i}: {fd} {}", ev.d_v[i]);
            }
            for i in 0..g.num_params() {
                let mut a = g.clone();
                a.params_mut()[i] += h;
                let mut b = g.clone();
                b.params_mut()[i] -= h;
                let fd = (f(&v, &a, eta) - f(&v, &b, eta)) / (2.0 * h);
                assert!((fd - ev.d_g[i]).abs() <= 1e-6 * fd.abs().max(1e-2), "g {i}: {fd} {}", ev.d_g[i]);
            }
            let fd = (f(&v, &g, eta + h) - f(&v, &g, eta - h)) / (2.0 * h);
            assert!((fd - ev.d_eta).abs() < 1e-6);
        }
    }

    #[test]
    fn eta_gradient_counts_active_hinges() {
        let (sys, xs, ws) = random_setup(0);
        let p = Problem::new(&sys, &xs, &ws, bundle()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut v = LyapunovNet::raw(2, &[6], Activation::Relu).unwrap();
        v.net.init_uniform(&mut rng, 1.0);
        let g = Mlp::zeros(&[3, 5, 1], Activation::Relu).unwrap();
        let plan = BatchPlan {
            size: 40,
            diagonal_fraction: 0.2,
            nn_fraction: 0.1,
        };
        let batch = draw_batch(&xs, &ws, &plan, 8).unwrap();
        let w = LossWeights {
            c1: 2.0,
            c3: 3.0,
            ..LossWeights::default()
        };
        let ev = weighted_loss_grad(&batch, &p, &v, &g, 0.001, &w, Reduction::Sum).unwrap();
        let c = w.sub();
        let expected: f64 = (1..5).map(|i| -(c[i] * ev.active[i] as f64)).sum();
        assert_eq!(ev.d_eta, expected);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let (sys, xs, ws) = random_setup(0);
        let p = Problem::new(&sys, &xs, &ws, bundle()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut v = LyapunovNet::raw(2, &[6], Activation::Relu).unwrap();
        v.net.init_uniform(&mut rng, 1.0);
        let mut g = Mlp::zeros(&[3, 5, 1], Activation::Relu).unwrap();
        g.init_uniform(&mut rng, 1.0);
        let plan = BatchPlan {
            size: 300,
            diagonal_fraction: 0.1,
            nn_fraction: 0.1,
        };
        let batch = draw_batch(&xs, &ws, &plan, 1).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| weighted_loss_grad(&batch, &p, &v, &g, -0.01, &LossWeights::default(), Reduction::Sum).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.sub, b.sub);
        assert_eq!(a.d_v, b.d_v);
        assert_eq!(a.d_g, b.d_g);
    }

    #[test]
    fn contracting_linear_controller_lowers_l3() {
        let sys = make_benchmark(Benchmark::Scalar);
        let xs = cover_box(&sys.state_box, 0.1, DEFAULT_MAX_POINTS).unwrap();
        let ws = cover_box(&AxisBox::cube(1, -1.0, 1.0).unwrap(), 0.5, DEFAULT_MAX_POINTS).unwrap();
        let p = Problem::new(&sys, &xs, &ws, bundle()).unwrap();
        // V = |x - xhat| built from two relu units
        let v = LyapunovNet::from_mlp(
            crate::nets::VForm::Raw,
            Mlp::from_layers(
                &[2, 2, 1],
                Activation::Relu,
                &[vec![vec![1.0, -1.0], vec![-1.0, 1.0]], vec![vec![1.0, 1.0]]],
                &[vec![0.0, 0.0], vec![0.0]],
            )
            .unwrap(),
            1,
        )
        .unwrap();
        let plan = BatchPlan {
            size: 200,
            diagonal_fraction: 0.0,
            nn_fraction: 0.2,
        };
        let batch = draw_batch(&xs, &ws, &plan, 3).unwrap();
        let ctrl = |k: f64| {
            Mlp::from_layers(
                &[2, 2, 1],
                Activation::Relu,
                &[vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![vec![-k, k]]],
                &[vec![0.0, 0.0], vec![0.0]],
            )
            .unwrap()
        };
        let mut last = f64::INFINITY;
        for k in [0.0, 0.2, 0.4, 0.8] {
            let l3 = sub_losses(&batch, &p, &v, &ctrl(k), 0.0, Reduction::Sum).unwrap().0[3];
            assert!(l3 <= last);
            last = l3;
        }
    }
}
