//! Closed-loop simulation, paired-trajectory diagnostics and plain SVG charts.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::euclid;
use crate::nets::{LyapunovNet, Mlp, Scratch, VWork};
use crate::provenance::substream_rng;
use crate::systems::{AxisBox, SystemSpec};

/// A closed-loop run. `states` has `steps + 1` rows, the other arrays `steps` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub plant: String,
    pub controller_hash: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub states: Vec<f64>,
    pub inputs_applied: Vec<f64>,
    pub externals: Vec<f64>,
    /// Step indices `k` with `x(k)` outside the state box.
    pub exits: Vec<usize>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() / self.n - 1
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.inputs_applied[k * self.m..(k + 1) * self.m]
    }

    pub fn external(&self, k: usize) -> &[f64] {
        &self.externals[k * self.p..(k + 1) * self.p]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.steps())
    }

    /// Columns `k, x.., u.., w..`; the final row has empty input columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k");
        for (c, d) in [("x", self.n), ("u", self.m), ("w", self.p)] {
            for i in 0..d {
                let _ = write!(s, ",{c}{i}");
            }
        }
        s.push('\n');
        for k in 0..=self.steps() {
            let _ = write!(s, "{k}");
            for v in self.state(k) {
                let _ = write!(s, ",{v:?}");
            }
            if k < self.steps() {
                for v in self.input(k).iter().chain(self.external(k)) {
                    let _ = write!(s, ",{v:?}");
                }
            } else {
                s.push_str(&",".repeat(self.m + self.p));
            }
            s.push('\n');
        }
        s
    }

    /// Replays the recorded inputs through the plant and compares bitwise.
    pub fn replays(&self, sys: &SystemSpec) -> bool {
        let mut next = vec![0.0; self.n];
        (0..self.steps()).all(|k| {
            sys.step_into(self.state(k), self.input(k), &mut next);
            next.iter().zip(self.state(k + 1)).all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }
}

/// Rolls `x(k+1) = f(x(k), g(x(k), w(k)))` for every row of `w_seq`.
pub fn simulate(sys: &SystemSpec, g: &Mlp, x0: &[f64], w_seq: &[f64]) -> Result<Trajectory> {
    let (n, m, p) = (sys.state_dim, sys.internal_input_dim, sys.external_input_dim);
    if x0.len() != n || w_seq.len() % p != 0 {
        return Err(Error::invalid(format!(
            "need x0 in R^{n} and a K x {p} external sequence, got {} and {} values",
            x0.len(),
            w_seq.len()
        )));
    }
    if g.input_dim() != n + p || g.output_dim() != m {
        return Err(Error::invalid("controller shape does not match the plant"));
    }
    let steps = w_seq.len() / p;
    let mut states = Vec::with_capacity((steps + 1) * n);
    let mut inputs = Vec::with_capacity(steps * m);
    let mut exits = Vec::new();
    states.extend_from_slice(x0);
    if !sys.state_box.contains(x0) {
        exits.push(0);
    }
    let mut s = Scratch::default();
    let mut inp = vec![0.0; n + p];
    let mut u = vec![0.0; m];
    let mut next = vec![0.0; n];
    for k in 0..steps {
        inp[..n].copy_from_slice(&states[k * n..(k + 1) * n]);
        inp[n..].copy_from_slice(&w_seq[k * p..(k + 1) * p]);
        g.forward_into(&inp, &mut s, &mut u);
        sys.step_into(&inp[..n], &u, &mut next);
        if next.iter().chain(&u).any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite state at step {}", k + 1)));
        }
        inputs.extend_from_slice(&u);
        states.extend_from_slice(&next);
        if !sys.state_box.contains(&next) {
            exits.push(k + 1);
        }
    }
    Ok(Trajectory {
        plant: sys.name.clone(),
        controller_hash: g.content_hash(),
        n,
        m,
        p,
        states,
        inputs_applied: inputs,
        externals: w_seq.to_vec(),
        exits,
    })
}

/// Per-step gap and Lyapunov value along a pair of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub gap: Vec<f64>,
    pub v: Vec<f64>,
}

impl Divergence {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,gap,V\n");
        for (k, (g, v)) in self.gap.iter().zip(&self.v).enumerate() {
            let _ = writeln!(s, "{k},{g:?},{v:?}");
        }
        s
    }

    /// `gap(K) / gap(0)`, infinite when the pair starts together and separates.
    pub fn contraction(&self) -> f64 {
        let (a, b) = (self.gap[0], *self.gap.last().expect("non-empty"));
        if a == 0.0 {
            if b == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            b / a
        }
    }

    /// Fraction of steps with `V(k+1) <= V(k)`.
    pub fn v_nonincreasing_fraction(&self) -> f64 {
        if self.v.len() < 2 {
            return 1.0;
        }
        let ok = self.v.windows(2).filter(|w| w[1] <= w[0]).count();
        ok as f64 / (self.v.len() - 1) as f64
    }
}

pub fn divergence_metrics(t1: &Trajectory, t2: &Trajectory, v: &LyapunovNet) -> Result<Divergence> {
    if t1.states.len() != t2.states.len() || t1.n != t2.n || t1.plant != t2.plant {
        return Err(Error::invalid("trajectories differ in length or plant"));
    }
    if v.state_dim() != t1.n {
        return Err(Error::invalid("Lyapunov network does not match the state dimension"));
    }
    let mut w = VWork::default();
    let (mut gap, mut vs) = (Vec::new(), Vec::new());
    for k in 0..=t1.steps() {
        gap.push(euclid(t1.state(k), t2.state(k)));
        vs.push(v.eval_fast(t1.state(k), t2.state(k), &mut w));
    }
    Ok(Divergence { gap, v: vs })
}

/// External input sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Signal {
    Constant { value: f64 },
    /// `amplitude * sin(k)`.
    Sine { amplitude: f64 },
    /// `cos(k / 2)^2`.
    CosSquared,
    /// Independent uniform draws from the external box.
    Uniform { seed: u64 },
}

impl Signal {
    /// `steps x p` row-major sequence; periodic signals repeat on every channel.
    pub fn generate(&self, steps: usize, wbox: &AxisBox) -> Vec<f64> {
        let p = wbox.dim();
        match self {
            Signal::Uniform { seed } => {
                let mut rng = substream_rng(*seed, "external-signal");
                (0..steps).flat_map(|_| wbox.sample(&mut rng)).collect()
            }
            _ => {
                let mut out = Vec::with_capacity(steps * p);
                for k in 0..steps {
                    let t = k as f64;
                    let v = match self {
                        Signal::Constant { value } => *value,
                        Signal::Sine { amplitude } => amplitude * t.sin(),
                        Signal::CosSquared => (t / 2.0).cos().powi(2),
                        Signal::Uniform { .. } => unreachable!(),
                    };
                    out.extend(std::iter::repeat(v).take(p));
                }
                out
            }
        }
    }
}

/// Runs many rollouts in parallel; results keep the job order.
pub fn run_batch(sys: &SystemSpec, g: &Mlp, jobs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<Trajectory>> {
    jobs.par_iter().map(|(x0, w)| simulate(sys, g, x0, w)).collect()
}

/// Summary of random rollouts from interior starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub rollouts: usize,
    pub steps: usize,
    pub trajectories_with_exits: usize,
    pub total_exits: usize,
}

/// `count` rollouts of length `steps` from uniform interior starts with
/// uniform random external inputs. Only exit counts are kept.
pub fn invariance_sweep(sys: &SystemSpec, g: &Mlp, count: usize, steps: usize, seed: u64) -> Result<InvarianceReport> {
    let mut rng = substream_rng(seed, "invariance-starts");
    let seeds: Vec<(Vec<f64>, u64)> = (0..count).map(|_| (sys.state_box.sample(&mut rng), rng.gen())).collect();
    let exits: Result<Vec<usize>> = seeds
        .par_iter()
        .map(|(x0, s)| {
            let w = Signal::Uniform { seed: *s }.generate(steps, &sys.external_box);
            simulate(sys, g, x0, &w).map(|t| t.exits.len())
        })
        .collect();
    let exits = exits?;
    Ok(InvarianceReport {
        rollouts: count,
        steps,
        trajectories_with_exits: exits.iter().filter(|&&e| e > 0).count(),
        total_exits: exits.iter().sum(),
    })
}

/// Paired rollouts with a shared external sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub pairs: usize,
    pub steps: usize,
    pub ratios: Vec<f64>,
    pub median_ratio: f64,
    /// Smallest per-pair fraction of steps with non-increasing `V`.
    pub min_v_nonincreasing: f64,
    pub median_v_nonincreasing: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `pairs` random start pairs driven by one shared random sequence each.
pub fn contraction_study(
    sys: &SystemSpec,
    g: &Mlp,
    v: &LyapunovNet,
    pairs: usize,
    steps: usize,
    seed: u64,
) -> Result<ContractionReport> {
    let mut rng = substream_rng(seed, "contraction-starts");
    let jobs: Vec<(Vec<f64>, Vec<f64>, u64)> = (0..pairs)
        .map(|_| (sys.state_box.sample(&mut rng), sys.state_box.sample(&mut rng), rng.gen()))
        .collect();
    let rows: Result<Vec<(f64, f64)>> = jobs
        .par_iter()
        .map(|(a, b, s)| {
            let w = Signal::Uniform { seed: *s }.generate(steps, &sys.external_box);
            let d = divergence_metrics(&simulate(sys, g, a, &w)?, &simulate(sys, g, b, &w)?, v)?;
            Ok((d.contraction(), d.v_nonincreasing_fraction()))
        })
        .collect();
    let rows = rows?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let fr: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(ContractionReport {
        pairs,
        steps,
        median_ratio: median(&ratios),
        ratios,
        min_v_nonincreasing: fr.iter().copied().fold(f64::INFINITY, f64::min),
        median_v_nonincreasing: median(&fr),
    })
}

/// A line chart with one or more series over `k`.
pub fn svg_chart(title: &str, y_label: &str, series: &[(&str, &[f64])]) -> String {
    let (w, h, pad) = (640.0, 360.0, 50.0);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let len = series.iter().map(|s| s.1.len()).max().unwrap_or(0).max(2);
    let finite = series.iter().flat_map(|s| s.1.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        hi = lo + 1.0;
    }
    let sx = |k: usize| pad + (w - 2.0 * pad) * k as f64 / (len - 1) as f64;
    let sy = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, w / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} L{pad} {} L{} {}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad,
        h - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{hi:.3e}</text>"#, pad - 4.0, pad + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{lo:.3e}</text>"#, pad - 4.0, h - pad);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">k (0 to {})</text>"#, w / 2.0, h - 15.0, len - 1);
    let _ = writeln!(s, r#"<text x="12" y="{}" font-family="sans-serif" font-size="11" transform="rotate(-90 12 {})">{}</text>"#, h / 2.0, h / 2.0, xml_escape(y_label));
    for (i, (name, ys)) in series.iter().enumerate() {
        let c = colors[i % colors.len()];
        let mut d = String::new();
        let mut pen_up = true;
        for (k, &y) in ys.iter().enumerate() {
            if !y.is_finite() {
                pen_up = true;
                continue;
            }
            let _ = write!(d, "{}{:.2} {:.2} ", if pen_up { "M" } else { "L" }, sx(k), sy(y));
            pen_up = false;
        }
        let _ = writeln!(s, r#"<path d="{}" stroke="{c}" fill="none" stroke-width="1.2"/>"#, d.trim_end());
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{c}">{}</text>"#,
            w - pad - 120.0,
            pad + 14.0 * (i as f64 + 1.0),
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;
    use crate::systems::{make_benchmark, Benchmark, FnDynamics};
    use std::sync::Arc;

    fn zero_g(sys: &SystemSpec) -> Mlp {
        Mlp::zeros(&[sys.state_dim + sys.external_input_dim, 4, sys.internal_input_dim], Activation::Relu).unwrap()
    }

    #[test]
    fn zero_controller_equilibrium() {
        let sys = make_benchmark(Benchmark::Scalar);
        let g = zero_g(&sys);
        let t = simulate(&sys, &g, &[0.0], &vec![0.0; 50]).unwrap();
        assert!(t.states.iter().all(|&x| x == 0.0));
        assert!(t.exits.is_empty() && t.replays(&sys));
        let t0 = simulate(&sys, &g, &[0.3], &[]).unwrap();
        assert_eq!(t0.states, vec![0.3]);
        assert_eq!(t0.steps(), 0);
    }

    #[test]
    fn exits_are_recorded_not_raised() {
        let sys = make_benchmark(Benchmark::Scalar);
        let mut g = zero_g(&sys);
        g.bias_mut(1)[0] = 1.0;
        let t = simulate(&sys, &g, &[1.5], &vec![0.0; 20]).unwrap();
        assert!(!t.exits.is_empty());
        assert!(t.replays(&sys));
    }

    #[test]
    fn non_finite_state_reports_step() {
        let sys = SystemSpec::new(
            "blowup",
            1,
            AxisBox::cube(1, -1.0, 1.0).unwrap(),
            AxisBox::cube(1, -1.0, 1.0).unwrap(),
            None,
            0.1,
            1.0,
            1.0,
            Arc::new(FnDynamics::new(|x, _u, out| out[0] = x[0] * 1e200)),
        )
        .unwrap();
        let err = simulate(&sys, &zero_g(&sys), &[0.5], &vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("step 2"));
    }

    #[test]
    fn identical_runs_have_zero_gap() {
        let sys = make_benchmark(Benchmark::Manipulator);
        let mut g = zero_g(&sys);
        g.weight_mut(0).iter_mut().enumerate().for_each(|(i, w)| *w = 0.1 * i as f64 - 0.3);
        let w = Signal::Sine { amplitude: 0.3 }.generate(100, &sys.external_box);
        let t = simulate(&sys, &g, &[0.1, -0.2], &w).unwrap();
        let v = LyapunovNet::squared(2, &[3], 2, Activation::Tanh).unwrap();
        let d = divergence_metrics(&t, &t, &v).unwrap();
        assert!(d.gap.iter().all(|&x| x == 0.0));
        assert!(d.v.iter().all(|&x| x == 0.0));
        let short = simulate(&sys, &g, &[0.1, -0.2], &w[..10]).unwrap();
        assert!(divergence_metrics(&t, &short, &v).is_err());
    }

    #[test]
    fn signals() {
        let b = AxisBox::cube(2, -1.0, 1.0).unwrap();
        assert_eq!(Signal::Constant { value: 0.2 }.generate(3, &b), vec![0.2; 6]);
        let c = Signal::CosSquared.generate(4, &b);
        assert_eq!(c[0], 1.0);
        assert!((c[2] - 0.5f64.cos().powi(2)).abs() < 1e-15);
        let u = Signal::Uniform { seed: 1 }.generate(100, &b);
        assert!(u.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(u, Signal::Uniform { seed: 1 }.generate(100, &b));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn linear_feedback_contracts() {
        let sys = make_benchmark(Benchmark::Scalar);
        // u = relu(-x) - relu(x) = -x
        let mut g = Mlp::zeros(&[2, 2, 1], Activation::Relu).unwrap();
        g.weight_mut(0).copy_from_slice(&[-1.0, 0.0, 1.0, 0.0]);
        g.weight_mut(1).copy_from_slice(&[1.0, -1.0]);
        let v = LyapunovNet::squared(1, &[1], 1, Activation::Relu).unwrap();
        let r = contraction_study(&sys, &g, &v, 20, 2000, 1).unwrap();
        assert!(r.median_ratio < 1e-4, "{}", r.median_ratio);
        let inv = invariance_sweep(&sys, &g, 50, 500, 2).unwrap();
        assert_eq!(inv.total_exits, 0);
        let svg = svg_chart("gap", "|dx|", &[("a", &[1.0, 0.5, 0.25])]);
        assert!(svg.starts_with("<svg") && svg.contains("<path"));
    }
}
