//! Exact scenario optimum over a finite dataset, composite Lipschitz constant
//! and the validity certificate.
//!
//! [`evaluate_eta`] streams over every constraint of the sampled program:
//!
//! ```text
//! lower:    -V(x_q, x_r) + k1 d^g1                                      q != r
//! upper:     V(x_q, x_r) - k2 d^g2                                      q != r
//! decrease:  V(f_q, f_r) - V(x_q, x_r) + k3 d^g3 - kw |w_q - w_r|^gw    q != r, all (w_q, w_r)
//! barrier:   h(f(x_q, g(x_q, w_q))) - h(x_q)                            all (q, w_q)
//! ```
//!
//! and returns the largest left-hand side. Next states are computed once per
//! `(state, input)` sample and the first hidden layer of `V` is split into a
//! per-state partial sum and per-state products, so the hot loop only finishes
//! the affine map. Every value is bitwise identical to a naive evaluation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classk_barrier::{classk_lipschitz, BarrierFn, ClassK, ClassKBundle};
use crate::error::{Error, Result};
use crate::lmi::{build_lmi, pd_logdet, LmiContext};
use crate::losses::euclid;
use crate::nets::{squared_gap, LyapunovNet, Mlp, Scratch, VForm};
use crate::provenance::substream_rng;
use crate::sampling::CoverDataset;
use crate::systems::{AxisBox, SystemSpec};

/// Evaluations above this count need an explicit override.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum EnumerationMode {
    Exhaustive,
    Audit { count: u64, seed: u64 },
}

impl EnumerationMode {
    /// Parses `exhaustive` or `audit:<count>`.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        if s == "exhaustive" {
            return Ok(EnumerationMode::Exhaustive);
        }
        if let Some(c) = s.strip_prefix("audit:") {
            let count: u64 = c
                .parse()
                .map_err(|_| Error::invalid(format!("bad audit count in '{s}'")))?;
            if count == 0 {
                return Err(Error::invalid("audit count must be positive"));
            }
            return Ok(EnumerationMode::Audit { count, seed });
        }
        Err(Error::invalid(format!("mode must be 'exhaustive' or 'audit:<count>', got '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lower,
    Upper,
    Decrease,
    Barrier,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Lower, Family::Upper, Family::Decrease, Family::Barrier];
}

/// The constraint attaining a maximum. For the barrier family `r == q` and `wr == wq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Witness {
    pub family: Family,
    pub q: usize,
    pub r: usize,
    pub wq: usize,
    pub wr: usize,
}

/// Per-family maximum and hinge mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyStats {
    pub family: Family,
    /// `-inf` (written as `null`) when nothing was evaluated.
    #[serde(with = "neg_inf_as_null")]
    pub max: f64,
    pub witness: Option<Witness>,
    pub evaluated: u64,
    /// `sum max(0, lhs - eta_ref)` over the evaluated constraints.
    pub hinge_sum: f64,
}

impl FamilyStats {
    fn empty(family: Family) -> Self {
        FamilyStats {
            family,
            max: f64::NEG_INFINITY,
            witness: None,
            evaluated: 0,
            hinge_sum: 0.0,
        }
    }

    #[inline]
    fn push(&mut self, lhs: f64, eta_ref: f64, w: impl FnOnce() -> Witness) {
        if lhs > self.max || self.witness.is_none() {
            self.max = lhs;
            self.witness = Some(w());
        }
        let e = lhs - eta_ref;
        if e > 0.0 {
            self.hinge_sum += e;
        }
        self.evaluated += 1;
    }

    /// Appends a later block of the enumeration; earlier witnesses win ties.
    fn absorb(&mut self, later: &FamilyStats) {
        if later.witness.is_some() && (self.witness.is_none() || later.max > self.max) {
            self.max = later.max;
            self.witness = later.witness;
        }
        self.hinge_sum += later.hinge_sum;
        self.evaluated += later.evaluated;
    }
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// Content hashes linking datasets, weights and certificate.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HashChain {
    pub states: String,
    pub inputs: String,
    pub lyapunov: String,
    pub controller: String,
}

impl HashChain {
    pub fn of(xs: &CoverDataset, ws: &CoverDataset, v: &LyapunovNet, g: &Mlp) -> Self {
        HashChain {
            states: xs.content_hash("x"),
            inputs: ws.content_hash("w"),
            lyapunov: v.content_hash(),
            controller: g.weights_doc(None).content_hash,
        }
    }
}

/// Size of the constraint set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCounts {
    pub states: usize,
    pub inputs: usize,
    pub lower: u128,
    pub upper: u128,
    pub decrease: u128,
    pub barrier: u128,
}

impl ConstraintCounts {
    pub fn new(n: usize, m: usize) -> Self {
        let (n, m) = (n as u128, m as u128);
        let pairs = n * n.saturating_sub(1);
        ConstraintCounts {
            states: n as usize,
            inputs: m as usize,
            lower: pairs,
            upper: pairs,
            decrease: pairs * m * m,
            barrier: n * m,
        }
    }

    pub fn total(&self) -> u128 {
        self.lower + self.upper + self.decrease + self.barrier
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mode: EnumerationMode,
    /// Reference level for the reported hinge sums.
    pub eta_ref: f64,
    pub cap: u128,
    pub force: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: EnumerationMode::Exhaustive,
            eta_ref: 0.0,
            cap: DEFAULT_ENUMERATION_CAP,
            force: false,
        }
    }
}

/// Result of one pass over the constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaEvaluation {
    pub eta_star: f64,
    pub witness: Option<Witness>,
    pub families: Vec<FamilyStats>,
    /// `max |V(x, x)|` over the state samples.
    pub diag_residual: f64,
    /// `sum max(0, V(x, x))` over the state samples.
    pub diag_hinge: f64,
    pub eta_ref: f64,
    pub mode: EnumerationMode,
    pub counts: ConstraintCounts,
    pub hashes: HashChain,
}

impl EtaEvaluation {
    pub fn family(&self, f: Family) -> &FamilyStats {
        self.families.iter().find(|s| s.family == f).expect("all families present")
    }

    /// Hinge sums `[L0, L1, L2, L3, L4]` at `eta_ref`.
    pub fn hinge_losses(&self) -> [f64; 5] {
        [
            self.diag_hinge,
            self.family(Family::Lower).hinge_sum,
            self.family(Family::Upper).hinge_sum,
            self.family(Family::Decrease).hinge_sum,
            self.family(Family::Barrier).hinge_sum,
        ]
    }
}

/// First-layer split of a raw `V` over a set of states.
struct RawCache {
    h: usize,
    n: usize,
    /// `sum_j W0[k][j] s[j]` over the first argument's columns.
    a: Vec<f64>,
    /// `W0[k][n + j] s[j]` for the second argument's columns.
    p: Vec<f64>,
}

impl RawCache {
    fn build(net: &Mlp, states: &[f64], n: usize) -> Self {
        let h = net.layer_sizes()[1];
        let w = net.weight(0);
        let count = states.len() / n;
        let mut a = Vec::with_capacity(count * h);
        let mut p = Vec::with_capacity(count * h * n);
        for s in states.chunks_exact(n) {
            for k in 0..h {
                let row = &w[k * 2 * n..(k + 1) * 2 * n];
                let mut acc = 0.0;
                for j in 0..n {
                    acc += row[j] * s[j];
                }
                a.push(acc);
                for j in 0..n {
                    p.push(row[n + j] * s[j]);
                }
            }
        }
        RawCache { h, n, a, p }
    }
}

/// `V` evaluated on cached states.
enum FastV<'a> {
    Raw {
        net: &'a Mlp,
        /// Single hidden layer with scalar output: finished inline.
        shallow: bool,
    },
    Squared {
        net: &'a Mlp,
    },
}

enum Cache {
    Raw(RawCache),
    Squared { d: usize, emb: Vec<f64> },
}

struct FastBuf {
    hidden: Vec<f64>,
    s: Scratch,
    out: [f64; 1],
}

impl<'a> FastV<'a> {
    fn new(v: &'a LyapunovNet) -> Self {
        match v.form {
            VForm::Raw => FastV::Raw {
                net: &v.net,
                shallow: v.net.num_layers() == 2,
            },
            VForm::Squared => FastV::Squared { net: &v.net },
        }
    }

    fn cache(&self, states: &[f64], n: usize) -> Cache {
        match self {
            FastV::Raw { net, .. } => Cache::Raw(RawCache::build(net, states, n)),
            FastV::Squared { net } => {
                let d = net.output_dim();
                let mut emb = vec![0.0; states.len() / n * d];
                let mut s = Scratch::default();
                for (i, st) in states.chunks_exact(n).enumerate() {
                    net.forward_into(st, &mut s, &mut emb[i * d..(i + 1) * d]);
                }
                Cache::Squared { d, emb }
            }
        }
    }

    #[inline]
    fn eval(&self, c: &Cache, ia: usize, ib: usize, buf: &mut FastBuf) -> f64 {
        match (self, c) {
            (FastV::Raw { net, shallow }, Cache::Raw(rc)) => {
                let (h, n) = (rc.h, rc.n);
                let b0 = net.bias(0);
                let a = &rc.a[ia * h..(ia + 1) * h];
                let p = &rc.p[ib * h * n..(ib + 1) * h * n];
                let act = net.activation();
                if *shallow {
                    let w1 = net.weight(1);
                    let mut out = 0.0;
                    for k in 0..h {
                        let mut acc = a[k];
                        for j in 0..n {
                            acc += p[k * n + j];
                        }
                        out += w1[k] * act.apply(acc + b0[k]);
                    }
                    out + net.bias(1)[0]
                } else {
                    buf.hidden.clear();
                    for k in 0..h {
                        let mut acc = a[k];
                        for j in 0..n {
                            acc += p[k * n + j];
                        }
                        buf.hidden.push(act.apply(acc + b0[k]));
                    }
                    Mlp::load_scratch(&mut buf.s, &buf.hidden);
                    net.forward_from(1, &mut buf.s, &mut buf.out);
                    buf.out[0]
                }
            }
            (FastV::Squared { .. }, Cache::Squared { d, emb }) => {
                squared_gap(&emb[ia * d..(ia + 1) * d], &emb[ib * d..(ib + 1) * d])
            }
            _ => unreachable!("cache built for another form"),
        }
    }
}

/// Next states `f(x_q, g(x_q, w))` for every state and input sample, row `q * M + w`.
fn next_states(sys: &SystemSpec, g: &Mlp, xs: &CoverDataset, ws: &CoverDataset) -> Result<Vec<f64>> {
    let (n, p, m) = (sys.state_dim, sys.external_input_dim, sys.internal_input_dim);
    let rows: Result<Vec<Vec<f64>>> = (0..xs.count())
        .into_par_iter()
        .map(|q| {
            let x = xs.point(q);
            let mut s = Scratch::default();
            let mut inp = vec![0.0; n + p];
            let mut u = vec![0.0; m];
            let mut out = vec![0.0; ws.count() * n];
            inp[..n].copy_from_slice(x);
            for wi in 0..ws.count() {
                inp[n..].copy_from_slice(ws.point(wi));
                g.forward_into(&inp, &mut s, &mut u);
                let f = &mut out[wi * n..(wi + 1) * n];
                sys.step_into(x, &u, f);
                if f.iter().chain(&u).any(|v| !v.is_finite()) {
                    return Err(Error::numeric(format!(
                        "non-finite closed-loop step at state sample {q}, input sample {wi} (x={x:?}, u={u:?})"
                    )));
                }
            }
            Ok(out)
        })
        .collect();
    Ok(rows?.concat())
}

/// Runs the constraint enumeration.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_eta(
    sys: &SystemSpec,
    v: &LyapunovNet,
    g: &Mlp,
    xs: &CoverDataset,
    ws: &CoverDataset,
    bundle: &ClassKBundle,
    bf: &BarrierFn,
    opts: &EvalOptions,
) -> Result<EtaEvaluation> {
    let n = sys.state_dim;
    if xs.dim() != n || ws.dim() != sys.external_input_dim || v.state_dim() != n {
        return Err(Error::invalid("datasets or Lyapunov network do not match the plant"));
    }
    if g.input_dim() != n + sys.external_input_dim || g.output_dim() != sys.internal_input_dim {
        return Err(Error::invalid("controller shape does not match the plant"));
    }
    let counts = ConstraintCounts::new(xs.count(), ws.count());
    let total = counts.total();
    let work = match opts.mode {
        EnumerationMode::Exhaustive => total,
        EnumerationMode::Audit { count, .. } => total.min(count as u128),
    };
    if work > opts.cap && !opts.force {
        return Err(Error::EnumerationCap {
            required: work,
            cap: opts.cap,
        });
    }

    let next = next_states(sys, g, xs, ws)?;
    let fast = FastV::new(v);
    let cx = fast.cache(xs.as_flat(), n);
    let cf = fast.cache(&next, n);
    let m = ws.count();
    let sigma = sigma_table(ws, bundle);

    let mut diag_residual = 0.0_f64;
    let mut diag_hinge = 0.0;
    {
        let mut buf = new_buf();
        for q in 0..xs.count() {
            let vd = fast.eval(&cx, q, q, &mut buf);
            diag_residual = diag_residual.max(vd.abs());
            if vd > 0.0 {
                diag_hinge += vd;
            }
        }
    }

    let ctx = Ctx {
        xs,
        m,
        bundle,
        bf,
        fast: &fast,
        cx: &cx,
        cf: &cf,
        next: &next,
        sigma: &sigma,
        n,
        eta_ref: opts.eta_ref,
    };
    let exhaustive = match opts.mode {
        EnumerationMode::Exhaustive => true,
        EnumerationMode::Audit { count, .. } => count as u128 >= total,
    };
    let families = if exhaustive {
        ctx.exhaustive()
    } else {
        let EnumerationMode::Audit { count, seed } = opts.mode else {
            unreachable!()
        };
        ctx.sampled(&counts, count, seed)
    };

    let mut eta_star = f64::NEG_INFINITY;
    let mut witness = None;
    for f in &families {
        if f.witness.is_some() && (witness.is_none() || f.max > eta_star) {
            eta_star = f.max;
            witness = f.witness;
        }
    }
    if !eta_star.is_finite() {
        return Err(Error::numeric(format!("scenario optimum is not finite ({eta_star})")));
    }
    Ok(EtaEvaluation {
        eta_star,
        witness,
        families: families.to_vec(),
        diag_residual,
        diag_hinge,
        eta_ref: opts.eta_ref,
        mode: opts.mode,
        counts,
        hashes: HashChain::of(xs, ws, v, g),
    })
}

fn new_buf() -> FastBuf {
    FastBuf {
        hidden: Vec::new(),
        s: Scratch::default(),
        out: [0.0],
    }
}

fn sigma_table(ws: &CoverDataset, bundle: &ClassKBundle) -> Vec<f64> {
    let m = ws.count();
    let mut t = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            t[a * m + b] = bundle.eval_unchecked(ClassK::Sigma, euclid(ws.point(a), ws.point(b)));
        }
    }
    t
}

struct Ctx<'a> {
    xs: &'a CoverDataset,
    m: usize,
    bundle: &'a ClassKBundle,
    bf: &'a BarrierFn,
    fast: &'a FastV<'a>,
    cx: &'a Cache,
    cf: &'a Cache,
    next: &'a [f64],
    sigma: &'a [f64],
    n: usize,
    eta_ref: f64,
}

impl Ctx<'_> {
    fn barrier_lhs(&self, q: usize, wi: usize) -> f64 {
        let f = &self.next[(q * self.m + wi) * self.n..(q * self.m + wi + 1) * self.n];
        self.bf.eval(f) - self.bf.eval(self.xs.point(q))
    }

    /// Lower, upper and all decrease constraints of pair `(q, r)`.
    #[inline]
    fn pair(&self, q: usize, r: usize, st: &mut [FamilyStats; 3], buf: &mut FastBuf) {
        let m = self.m;
        let b = self.bundle;
        let eta = self.eta_ref;
        let d = euclid(self.xs.point(q), self.xs.point(r));
        let vxx = self.fast.eval(self.cx, q, r, buf);
        st[0].push(-vxx + b.eval_unchecked(ClassK::A1, d), eta, || Witness {
            family: Family::Lower,
            q,
            r,
            wq: 0,
            wr: 0,
        });
        st[1].push(vxx - b.eval_unchecked(ClassK::A2, d), eta, || Witness {
            family: Family::Upper,
            q,
            r,
            wq: 0,
            wr: 0,
        });
        let a3 = b.eval_unchecked(ClassK::A3, d);
        let dec = &mut st[2];
        for wq in 0..m {
            let ia = q * m + wq;
            for wr in 0..m {
                let vff = self.fast.eval(self.cf, ia, r * m + wr, buf);
                let lhs = vff - vxx + a3 - self.sigma[wq * m + wr];
                dec.push(lhs, eta, || Witness {
                    family: Family::Decrease,
                    q,
                    r,
                    wq,
                    wr,
                });
            }
        }
    }

    fn exhaustive(&self) -> [FamilyStats; 4] {
        let n_states = self.xs.count();
        let rows: Vec<[FamilyStats; 3]> = (0..n_states)
            .into_par_iter()
            .map(|q| {
                let mut st = [
                    FamilyStats::empty(Family::Lower),
                    FamilyStats::empty(Family::Upper),
                    FamilyStats::empty(Family::Decrease),
                ];
                let mut buf = new_buf();
                for r in 0..n_states {
                    if r != q {
                        self.pair(q, r, &mut st, &mut buf);
                    }
                }
                st
            })
            .collect();
        let mut out = [
            FamilyStats::empty(Family::Lower),
            FamilyStats::empty(Family::Upper),
            FamilyStats::empty(Family::Decrease),
            FamilyStats::empty(Family::Barrier),
        ];
        for row in &rows {
            for i in 0..3 {
                out[i].absorb(&row[i]);
            }
        }
        for q in 0..n_states {
            for wi in 0..self.m {
                out[3].push(self.barrier_lhs(q, wi), self.eta_ref, || Witness {
                    family: Family::Barrier,
                    q,
                    r: q,
                    wq: wi,
                    wr: wi,
                });
            }
        }
        out
    }

    /// Uniform sampling with replacement over the whole constraint index space.
    fn sampled(&self, counts: &ConstraintCounts, count: u64, seed: u64) -> [FamilyStats; 4] {
        let mut rng = substream_rng(seed, "audit-constraints");
        let mut out = [
            FamilyStats::empty(Family::Lower),
            FamilyStats::empty(Family::Upper),
            FamilyStats::empty(Family::Decrease),
            FamilyStats::empty(Family::Barrier),
        ];
        let n = counts.states;
        let m = self.m;
        let b = self.bundle;
        let mut buf = new_buf();
        let decode_pair = |i: u128| -> (usize, usize) {
            let q = (i / (n as u128 - 1)) as usize;
            let r0 = (i % (n as u128 - 1)) as usize;
            (q, if r0 >= q { r0 + 1 } else { r0 })
        };
        let eta = self.eta_ref;
        for _ in 0..count {
            let mut i = rng.gen_range(0..counts.total());
            if i < counts.lower {
                let (q, r) = decode_pair(i);
                let d = euclid(self.xs.point(q), self.xs.point(r));
                let vxx = self.fast.eval(self.cx, q, r, &mut buf);
                out[0].push(-vxx + b.eval_unchecked(ClassK::A1, d), eta, || Witness {
                    family: Family::Lower,
                    q,
                    r,
                    wq: 0,
                    wr: 0,
                });
                continue;
            }
            i -= counts.lower;
            if i < counts.upper {
                let (q, r) = decode_pair(i);
                let d = euclid(self.xs.point(q), self.xs.point(r));
                let vxx = self.fast.eval(self.cx, q, r, &mut buf);
                out[1].push(vxx - b.eval_unchecked(ClassK::A2, d), eta, || Witness {
                    family: Family::Upper,
                    q,
                    r,
                    wq: 0,
                    wr: 0,
                });
                continue;
            }
            i -= counts.upper;
            if i < counts.decrease {
                let mm = (m * m) as u128;
                let (q, r) = decode_pair(i / mm);
                let rem = (i % mm) as usize;
                let (wq, wr) = (rem / m, rem % m);
                let d = euclid(self.xs.point(q), self.xs.point(r));
                let vxx = self.fast.eval(self.cx, q, r, &mut buf);
                let vff = self.fast.eval(self.cf, q * m + wq, r * m + wr, &mut buf);
                let lhs = vff - vxx + b.eval_unchecked(ClassK::A3, d) - self.sigma[wq * m + wr];
                out[2].push(lhs, eta, || Witness {
                    family: Family::Decrease,
                    q,
                    r,
                    wq,
                    wr,
                });
                continue;
            }
            i -= counts.decrease;
            let (q, wi) = ((i / m as u128) as usize, (i % m as u128) as usize);
            out[3].push(self.barrier_lhs(q, wi), eta, || Witness {
                family: Family::Barrier,
                q,
                r: q,
                wq: wi,
                wr: wi,
            });
        }
        out
    }
}

/// Network Lipschitz targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipTargets {
    pub lyapunov: f64,
    pub controller: f64,
    pub barrier: f64,
}

/// Every input of the composite constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeInputs {
    pub lip_lyapunov: f64,
    pub lip_controller: f64,
    pub lip_barrier: f64,
    pub lip_x: f64,
    pub lip_u: f64,
    pub lip_1: f64,
    pub lip_2: f64,
    pub lip_3: f64,
    pub lip_w: f64,
    pub diam_x: f64,
    pub diam_w: f64,
}

/// The four inflation terms and their maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBreakdown {
    pub inputs: CompositeInputs,
    /// `sqrt2 L_L (L_x + sqrt2 L_u L_C + 1)`, the plant part of the third term.
    pub plant_factor: f64,
    pub terms: [f64; 4],
    pub max: f64,
    /// A published value kept for comparison; never used unless requested.
    pub reference: Option<f64>,
}

/// Computes the composite Lipschitz constant.
pub fn composite_lipschitz(t: &LipTargets, bundle: &ClassKBundle, sys: &SystemSpec) -> LipschitzBreakdown {
    let dx = sys.state_box.diameter();
    let dw = sys.external_box.diameter();
    composite_from(
        t,
        sys.lip_x,
        sys.lip_u,
        classk_lipschitz(bundle, ClassK::A1, dx),
        classk_lipschitz(bundle, ClassK::A2, dx),
        classk_lipschitz(bundle, ClassK::A3, dx),
        classk_lipschitz(bundle, ClassK::Sigma, dw),
        dx,
        dw,
    )
}

#[allow(clippy::too_many_arguments)]
fn composite_from(t: &LipTargets, lx: f64, lu: f64, l1: f64, l2: f64, l3: f64, lw: f64, dx: f64, dw: f64) -> LipschitzBreakdown {
    let s2 = std::f64::consts::SQRT_2;
    let closed = lx + s2 * lu * t.controller + 1.0;
    let plant_factor = s2 * t.lyapunov * closed;
    let terms = [
        s2 * t.lyapunov + 2.0 * l1,
        s2 * t.lyapunov + 2.0 * l2,
        plant_factor + 2.0 * (l3 + lw),
        t.barrier * closed,
    ];
    LipschitzBreakdown {
        inputs: CompositeInputs {
            lip_lyapunov: t.lyapunov,
            lip_controller: t.controller,
            lip_barrier: t.barrier,
            lip_x: lx,
            lip_u: lu,
            lip_1: l1,
            lip_2: l2,
            lip_3: l3,
            lip_w: lw,
            diam_x: dx,
            diam_w: dw,
        },
        plant_factor,
        terms,
        max: terms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        reference: None,
    }
}

/// Which constant enters the margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LPolicy {
    #[default]
    Composite,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiEntry {
    pub bound: f64,
    pub is_pd: bool,
    pub logdet: Option<f64>,
    pub min_pivot: Option<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiStatus {
    pub lyapunov: LmiEntry,
    pub controller: LmiEntry,
    /// True when the status is taken from published results rather than computed.
    pub reported: bool,
}

impl LmiStatus {
    pub fn both_pd(&self) -> bool {
        self.lyapunov.is_pd && self.controller.is_pd
    }

    /// Positive definite as reported alongside published results.
    pub fn reported_pd() -> Self {
        let e = LmiEntry {
            bound: 0.0,
            is_pd: true,
            logdet: None,
            min_pivot: None,
            lambda: Vec::new(),
        };
        LmiStatus {
            lyapunov: e.clone(),
            controller: e,
            reported: true,
        }
    }
}

/// Bounds each network must satisfy for the targets to hold.
pub fn network_bounds(v: &LyapunovNet, t: &LipTargets, sys: &SystemSpec) -> (f64, f64) {
    (v.network_bound(t.lyapunov, sys.state_box.diameter()), t.controller)
}

/// Evaluates both Lipschitz LMIs at the given multipliers.
pub fn lmi_status(
    v: &LyapunovNet,
    g: &Mlp,
    lambda_v: &[f64],
    lambda_g: &[f64],
    t: &LipTargets,
    sys: &SystemSpec,
) -> Result<LmiStatus> {
    let (bv, bg) = network_bounds(v, t, sys);
    let entry = |net: &Mlp, lam: &[f64], bound: f64| -> Result<LmiEntry> {
        let r = pd_logdet(&build_lmi(&LmiContext::new(net, lam, bound)?))?;
        Ok(LmiEntry {
            bound,
            is_pd: r.is_pd,
            logdet: r.logdet,
            min_pivot: r.min_pivot,
            lambda: lam.to_vec(),
        })
    };
    Ok(LmiStatus {
        lyapunov: entry(&v.net, lambda_v, bv)?,
        controller: entry(g, lambda_g, bg)?,
        reported: false,
    })
}

/// Everything [`issue_certificate`] consumes.
#[derive(Debug, Clone)]
pub struct CertificateInputs {
    pub system: String,
    pub eta_star: f64,
    pub witness: Option<Witness>,
    pub families: Vec<FamilyStats>,
    pub breakdown: LipschitzBreakdown,
    pub policy: LPolicy,
    pub eps: f64,
    pub mode: EnumerationMode,
    pub counts: Option<ConstraintCounts>,
    pub diag_residual: f64,
    pub lmi: LmiStatus,
    pub evaluated_hashes: HashChain,
    pub expected_hashes: HashChain,
    pub notes: Vec<String>,
}

impl CertificateInputs {
    pub fn from_evaluation(
        system: &str,
        eval: &EtaEvaluation,
        breakdown: LipschitzBreakdown,
        eps: f64,
        lmi: LmiStatus,
        expected_hashes: HashChain,
    ) -> Self {
        CertificateInputs {
            system: system.to_string(),
            eta_star: eval.eta_star,
            witness: eval.witness,
            families: eval.families.clone(),
            breakdown,
            policy: LPolicy::Composite,
            eps,
            mode: eval.mode,
            counts: Some(eval.counts),
            diag_residual: eval.diag_residual,
            lmi,
            evaluated_hashes: eval.hashes.clone(),
            expected_hashes,
            notes: Vec::new(),
        }
    }
}

pub const CERTIFICATE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub format_version: u32,
    pub system: String,
    pub eta_star: f64,
    pub eta_witness: Option<Witness>,
    pub families: Vec<FamilyStats>,
    pub lipschitz: LipschitzBreakdown,
    pub l_policy: LPolicy,
    pub l_used: f64,
    pub eps: f64,
    pub margin: f64,
    pub valid: bool,
    pub mode: EnumerationMode,
    pub counts: Option<ConstraintCounts>,
    pub diag_residual: f64,
    pub lmi: LmiStatus,
    pub hashes: HashChain,
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("certificate serializes");
        s.push('\n');
        s
    }
}

/// Margin `eta + L eps`.
pub fn margin(eta: f64, l: f64, eps: f64) -> f64 {
    eta + l * eps
}

/// Checks the hash chain, computes the margin and the verdict.
pub fn issue_certificate(inp: CertificateInputs) -> Result<Certificate> {
    if inp.evaluated_hashes != inp.expected_hashes {
        return Err(Error::Provenance(format!(
            "evaluation inputs {:?} do not match the expected artifacts {:?}",
            inp.evaluated_hashes, inp.expected_hashes
        )));
    }
    if !(inp.eps.is_finite() && inp.eps >= 0.0) {
        return Err(Error::invalid(format!("eps must be non-negative, got {}", inp.eps)));
    }
    let l_used = match inp.policy {
        LPolicy::Composite => inp.breakdown.max,
        LPolicy::Reference => inp
            .breakdown
            .reference
            .ok_or_else(|| Error::invalid("reference policy needs a reference constant"))?,
    };
    let margin = margin(inp.eta_star, l_used, inp.eps);
    let exhaustive = inp.mode == EnumerationMode::Exhaustive;
    let valid = margin <= 0.0 && exhaustive && inp.lmi.both_pd();
    let mut notes = inp.notes;
    if !exhaustive {
        notes.push("audit mode: a sampled subset of constraints cannot certify validity".into());
    }
    if !inp.lmi.both_pd() {
        notes.push("a Lipschitz LMI is not positive definite at the final parameters".into());
    }
    if inp.lmi.reported {
        notes.push("LMI status taken from published results, not recomputed".into());
    }
    match (inp.policy, inp.breakdown.reference) {
        (LPolicy::Reference, Some(r)) => notes.push(format!(
            "margin uses the reference constant {r}; the composite maximum is {}",
            inp.breakdown.max
        )),
        (LPolicy::Composite, Some(r)) if inp.breakdown.max > r => notes.push(format!(
            "composite maximum {} exceeds the reference constant {r}",
            inp.breakdown.max
        )),
        _ => {}
    }
    if inp.diag_residual > 0.0 {
        notes.push(format!(
            "diagonal residual max|V(x,x)| = {} is reported, not covered by the inflation bound",
            inp.diag_residual
        ));
    }
    Ok(Certificate {
        format_version: CERTIFICATE_FORMAT_VERSION,
        system: inp.system,
        eta_star: inp.eta_star,
        eta_witness: inp.witness,
        families: inp.families,
        lipschitz: inp.breakdown,
        l_policy: inp.policy,
        l_used,
        eps: inp.eps,
        margin,
        valid,
        mode: inp.mode,
        counts: inp.counts,
        diag_residual: inp.diag_residual,
        lmi: inp.lmi,
        hashes: inp.evaluated_hashes,
        notes,
    })
}

/// A published benchmark outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublishedCase {
    pub system: &'static str,
    pub eta: f64,
    pub l: f64,
    /// Covering radius stated with the hyperparameters.
    pub eps: f64,
    /// Radius used in the published margin arithmetic.
    pub margin_eps: f64,
    pub margin: f64,
}

/// Reported `(eta, L, eps)` triples and margins of the four benchmarks.
pub fn published_cases() -> [PublishedCase; 4] {
    [
        PublishedCase {
            system: "scalar",
            eta: -0.0015,
            l: 3.25,
            eps: 0.00039,
            margin_eps: 0.00039,
            margin: -0.00023,
        },
        PublishedCase {
            system: "manipulator",
            eta: -0.0579,
            l: 3.663,
            eps: 0.0157,
            margin_eps: 0.0157,
            margin: -0.00039,
        },
        PublishedCase {
            system: "jet",
            eta: -0.0169,
            l: 3.351,
            eps: 0.0157,
            margin_eps: 0.005,
            margin: -0.000145,
        },
        PublishedCase {
            system: "spacecraft",
            eta: -0.0460,
            l: 3.651,
            eps: 0.0125,
            margin_eps: 0.0125,
            margin: -0.00036,
        },
    ]
}

/// Certificate for a published triple at covering radius `eps`, with the
/// composite breakdown of `sys` under the given targets for comparison.
pub fn published_certificate(case: &PublishedCase, eps: f64, breakdown: LipschitzBreakdown) -> Result<Certificate> {
    let mut notes = Vec::new();
    if case.margin_eps != case.eps {
        notes.push(format!(
            "published margin {} uses eps = {} while the stated covering radius is {}; at {} the margin is {}",
            case.margin,
            case.margin_eps,
            case.eps,
            case.eps,
            margin(case.eta, case.l, case.eps)
        ));
    }
    let breakdown = LipschitzBreakdown {
        reference: Some(case.l),
        ..breakdown
    };
    issue_certificate(CertificateInputs {
        system: case.system.to_string(),
        eta_star: case.eta,
        witness: None,
        families: Vec::new(),
        breakdown,
        policy: LPolicy::Reference,
        eps,
        mode: EnumerationMode::Exhaustive,
        counts: None,
        diag_residual: 0.0,
        lmi: LmiStatus::reported_pd(),
        evaluated_hashes: HashChain::default(),
        expected_hashes: HashChain::default(),
        notes,
    })
}

/// Sampled Lipschitz constants of the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsLipschitz {
    pub lip_x_hat: f64,
    pub lip_u_hat: f64,
    pub lip_x: f64,
    pub lip_u: f64,
    pub input_box: Vec<[f64; 2]>,
    pub warnings: Vec<String>,
}

/// Largest sampled difference quotients of `f` in `x` (u held) and in `u` (x held).
///
/// Inputs are drawn from the plant's internal box, or `[-1, 1]^m` without one.
/// Half of the pairs are small perturbations, half independent draws.
pub fn estimate_dynamics_lipschitz(sys: &SystemSpec, pairs: usize, seed: u64) -> DynamicsLipschitz {
    let mut rng = substream_rng(seed, "dynamics-lipschitz");
    let ubox = sys
        .internal_box
        .clone()
        .unwrap_or_else(|| AxisBox::cube(sys.internal_input_dim, -1.0, 1.0).expect("unit box"));
    let xbox = &sys.state_box;
    let (n, _) = (sys.state_dim, sys.internal_input_dim);
    let (mut fa, mut fb) = (vec![0.0; n], vec![0.0; n]);
    let mut lx = 0.0_f64;
    let mut lu = 0.0_f64;
    let perturb = |rng: &mut rand_chacha::ChaCha8Rng, b: &AxisBox, a: &[f64], local: bool| -> Vec<f64> {
        if local {
            let r = 1e-4 * b.diameter();
            let mut p: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-r..=r)).collect();
            b.clamp(&mut p);
            p
        } else {
            b.sample(rng)
        }
    };
    for i in 0..pairs.max(1) {
        let local = i % 2 == 1;
        let u = ubox.sample(&mut rng);
        let xa = xbox.sample(&mut rng);
        let xb = perturb(&mut rng, xbox, &xa, local);
        let dx = euclid(&xa, &xb);
        if dx > 0.0 {
            sys.step_into(&xa, &u, &mut fa);
            sys.step_into(&xb, &u, &mut fb);
            let q = euclid(&fa, &fb) / dx;
            if q.is_finite() {
                lx = lx.max(q);
            }
        }
        let x = xbox.sample(&mut rng);
        let ua = ubox.sample(&mut rng);
        let ub = perturb(&mut rng, &ubox, &ua, local);
        let du = euclid(&ua, &ub);
        if du > 0.0 {
            sys.step_into(&x, &ua, &mut fa);
            sys.step_into(&x, &ub, &mut fb);
            let q = euclid(&fa, &fb) / du;
            if q.is_finite() {
                lu = lu.max(q);
            }
        }
    }
    let mut warnings = Vec::new();
    if lx > sys.lip_x {
        warnings.push(format!(
            "sampled state Lipschitz estimate {lx} exceeds the configured {}",
            sys.lip_x
        ));
    }
    if lu > sys.lip_u {
        warnings.push(format!(
            "sampled input Lipschitz estimate {lu} exceeds the configured {} over {:?}",
            sys.lip_u,
            ubox.to_pairs()
        ));
    }
    DynamicsLipschitz {
        lip_x_hat: lx,
        lip_u_hat: lu,
        lip_x: sys.lip_x,
        lip_u: sys.lip_u,
        input_box: ubox.to_pairs(),
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classk_barrier::{barrier_eval, classk_eval};
    use crate::nets::Activation;
    use crate::sampling::{cover_box, DEFAULT_MAX_POINTS};
    use crate::systems::{make_benchmark, Benchmark, FnDynamics};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn bundle() -> ClassKBundle {
        ClassKBundle::new([1e-5, 0.5, 1e-4, 0.01], [2.0; 4], 1.0).unwrap()
    }

    /// Plain enumeration of every constraint with naive evaluation.
    fn brute(sys: &SystemSpec, v: &LyapunovNet, g: &Mlp, xs: &CoverDataset, ws: &CoverDataset, b: &ClassKBundle) -> (f64, Witness, usize) {
        let bf = BarrierFn::new(&sys.state_box);
        let step = |x: &[f64], w: &[f64]| {
            let mut inp = x.to_vec();
            inp.extend_from_slice(w);
            sys.step(x, &g.forward(&inp).unwrap()).unwrap()
        };
        let dist = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(p, q)| (p - q) * (p - q)).fold(0.0, |s, t| s + t).sqrt();
        let mut best: Option<(f64, Witness)> = None;
        let mut seen = 0;
        let mut consider = |val: f64, w: Witness| {
            seen += 1;
            if best.map_or(true, |(b, _)| val > b) {
                best = Some((val, w));
            }
        };
        let (n, m) = (xs.count(), ws.count());
        let mut lists: Vec<Vec<(f64, Witness)>> = vec![Vec::new(); 4];
        for q in 0..n {
            for r in 0..n {
                if q == r {
                    continue;
                }
                let (x, xh) = (xs.point(q), xs.point(r));
                let d = dist(x, xh);
                let vxx = v.eval(x, xh).unwrap();
                let w0 = |family| Witness { family, q, r, wq: 0, wr: 0 };
                lists[0].push((-vxx + classk_eval(b, ClassK::A1, d).unwrap(), w0(Family::Lower)));
                lists[1].push((vxx - classk_eval(b, ClassK::A2, d).unwrap(), w0(Family::Upper)));
                for wq in 0..m {
                    for wr in 0..m {
                        let fq = step(x, ws.point(wq));
                        let fr = step(xh, ws.point(wr));
                        let s = classk_eval(b, ClassK::Sigma, dist(ws.point(wq), ws.point(wr))).unwrap();
                        let lhs = v.eval(&fq, &fr).unwrap() - vxx + classk_eval(b, ClassK::A3, d).unwrap() - s;
                        lists[2].push((lhs, Witness { family: Family::Decrease, q, r, wq, wr }));
                    }
                }
            }
        }
        for q in 0..n {
            for wq in 0..m {
                let x = xs.point(q);
                let lhs = barrier_eval(&bf, &step(x, ws.point(wq))) - barrier_eval(&bf, x);
                lists[3].push((lhs, Witness { family: Family::Barrier, q, r: q, wq, wr: wq }));
            }
        }
        for l in lists {
            for (val, w) in l {
                consider(val, w);
            }
        }
        let (v, w) = best.unwrap();
        (v, w, seen)
    }

    fn random_nets(sys: &SystemSpec, seed: u64, form: VForm) -> (LyapunovNet, Mlp) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = sys.state_dim;
        let mut v = match form {
            VForm::Raw => LyapunovNet::raw(n, &[7], Activation::Relu).unwrap(),
            VForm::Squared => LyapunovNet::squared(n, &[5], 2, Activation::Tanh).unwrap(),
        };
        v.net.init_uniform(&mut rng, 1.0);
        let mut g = Mlp::zeros(&[n + sys.external_input_dim, 4, sys.internal_input_dim], Activation::Relu).unwrap();
        g.init_uniform(&mut rng, 0.5);
        (v, g)
    }

    #[test]
    fn streaming_matches_brute_force() {
        for (bench, ex, ew) in [
            (Benchmark::Scalar, 0.5, 0.6),
            (Benchmark::Manipulator, 0.3, 0.3),
            (Benchmark::Jet, 0.15, 0.3),
            (Benchmark::Spacecraft, 0.25, 0.6),
        ] {
            let sys = make_benchmark(bench);
            let xs = cover_box(&sys.state_box, ex, DEFAULT_MAX_POINTS).unwrap();
            let ws = cover_box(&sys.external_box, ew, DEFAULT_MAX_POINTS).unwrap();
            for form in [VForm::Raw, VForm::Squared] {
                let (v, g) = random_nets(&sys, 3, form);
                let b = bundle();
                let ev = evaluate_eta(&sys, &v, &g, &xs, &ws, &b, &BarrierFn::new(&sys.state_box), &EvalOptions::default()).unwrap();
                let (eta, w, seen) = brute(&sys, &v, &g, &xs, &ws, &b);
                assert_eq!(ev.eta_star.to_bits(), eta.to_bits(), "{bench}");
                assert_eq!(ev.witness, Some(w));
                assert_eq!(ev.counts.total(), seen as u128);
            }
        }
    }

    #[test]
    fn zero_v_forces_positive_eta() {
        let sys = make_benchmark(Benchmark::Scalar);
        let xs = cover_box(&sys.state_box, 0.4, DEFAULT_MAX_POINTS).unwrap();
        let ws = cover_box(&sys.external_box, 0.5, DEFAULT_MAX_POINTS).unwrap();
        let v = LyapunovNet::raw(1, &[3], Activation::Relu).unwrap();
        let g = Mlp::zeros(&[2, 3, 1], Activation::Relu).unwrap();
        let ev = evaluate_eta(&sys, &v, &g, &xs, &ws, &bundle(), &BarrierFn::new(&sys.state_box), &EvalOptions::default()).unwrap();
        assert!(ev.family(Family::Lower).max > 0.0);
        assert!(ev.eta_star > 0.0);
        assert_eq!(ev.diag_residual, 0.0);
    }

    #[test]
    fn full_audit_equals_exhaustive_and_thread_count_is_irrelevant() {
        let sys = make_benchmark(Benchmark::Manipulator);
        let xs = cover_box(&sys.state_box, 0.3, DEFAULT_MAX_POINTS).unwrap();
        let ws = cover_box(&sys.external_box, 0.3, DEFAULT_MAX_POINTS).unwrap();
        let (v, g) = random_nets(&sys, 8, VForm::Raw);
        let bf = BarrierFn::new(&sys.state_box);
        let run = |mode, threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                evaluate_eta(&sys, &v, &g, &xs, &ws, &bundle(), &bf, &EvalOptions { mode, eta_ref: -0.01, ..Default::default() }).unwrap()
            })
        };
        let ex = run(EnumerationMode::Exhaustive, 1);
        let au = run(EnumerationMode::Audit { count: u64::MAX, seed: 4 }, 1);
        assert_eq!(ex.eta_star, au.eta_star);
        assert_eq!(ex.families, au.families);
        assert_eq!(ex, run(EnumerationMode::Exhaustive, 4));
        let small = run(EnumerationMode::Audit { count: 50, seed: 4 }, 1);
        assert!(small.eta_star <= ex.eta_star);
        assert_eq!(small.families.iter().map(|f| f.evaluated).sum::<u64>(), 50);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let sys = make_benchmark(Benchmark::Scalar);
        let xs = cover_box(&sys.state_box, 0.4, DEFAULT_MAX_POINTS).unwrap();
        let ws = cover_box(&sys.external_box, 0.5, DEFAULT_MAX_POINTS).unwrap();
        let (v, g) = random_nets(&sys, 1, VForm::Raw);
        let bf = BarrierFn::new(&sys.state_box);
        let opts = EvalOptions { cap: 10, ..Default::default() };
        let err = evaluate_eta(&sys, &v, &g, &xs, &ws, &bundle(), &bf, &opts).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { .. }));
        let forced = EvalOptions { force: true, ..opts };
        assert!(evaluate_eta(&sys, &v, &g, &xs, &ws, &bundle(), &bf, &forced).is_ok());
    }

    #[test]
    fn eta_is_monotone_under_dataset_growth() {
        let sys = make_benchmark(Benchmark::Scalar);
        let ws = cover_box(&sys.external_box, 0.5, DEFAULT_MAX_POINTS).unwrap();
        let coarse = cover_box(&sys.state_box, 0.4, DEFAULT_MAX_POINTS).unwrap();
        let mut pts: Vec<Vec<f64>> = coarse.points().map(<[f64]>::to_vec).collect();
        pts.extend([vec![0.05], vec![-1.2], vec![0.77]]);
        let fine = CoverDataset::from_points(&pts, 0.4, sys.state_box.clone()).unwrap();
        let (v, g) = random_nets(&sys, 2, VForm::Raw);
        let bf = BarrierFn::new(&sys.state_box);
        let a = evaluate_eta(&sys, &v, &g, &coarse, &ws, &bundle(), &bf, &EvalOptions::default()).unwrap();
        let b = evaluate_eta(&sys, &v, &g, &fine, &ws, &bundle(), &bf, &EvalOptions::default()).unwrap();
        assert!(b.eta_star >= a.eta_star);
    }

    #[test]
    fn composite_terms() {
        let sys = make_benchmark(Benchmark::Scalar);
        let t = LipTargets {
            lyapunov: 1.0,
            controller: 20.0,
            barrier: 1.0,
        };
        let br = composite_lipschitz(&t, &bundle(), &sys);
        assert!((br.plant_factor - 3.22843).abs() < 1e-5);
        assert!((br.terms[1] - (std::f64::consts::SQRT_2 + 2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert_eq!(br.max, br.terms[1]);
        let zero_u = composite_from(&t, 1.0, 0.0, 0.1, 0.2, 0.3, 0.4, 1.0, 1.0);
        assert_eq!(zero_u.terms[3], 2.0);
    }

    #[test]
    fn certificates_for_published_triples() {
        let sys = make_benchmark(Benchmark::Scalar);
        let br = composite_lipschitz(&LipTargets { lyapunov: 1.0, controller: 20.0, barrier: 1.0 }, &bundle(), &sys);
        let cases = published_cases();
        let c = published_certificate(&cases[0], cases[0].eps, br).unwrap();
        assert!((c.margin - -0.0002325).abs() < 1e-12 && c.valid);
        let c = published_certificate(&cases[1], cases[1].eps, br).unwrap();
        assert!((c.margin - -0.00039).abs() < 1e-6 && c.valid);
        let c = published_certificate(&cases[3], cases[3].eps, br).unwrap();
        assert!((c.margin - -0.0003625).abs() < 1e-12 && c.valid);
        let c = published_certificate(&cases[2], 0.005, br).unwrap();
        assert!((c.margin - -0.000145).abs() < 1e-12);
        assert!(c.notes.iter().any(|n| n.contains("0.0157")));
        let c = published_certificate(&cases[2], cases[2].eps, br).unwrap();
        assert!(c.margin > 0.0 && !c.valid);
    }

    #[test]
    fn certificate_rules() {
        let sys = make_benchmark(Benchmark::Scalar);
        let br = composite_lipschitz(&LipTargets { lyapunov: 1.0, controller: 20.0, barrier: 1.0 }, &bundle(), &sys);
        let base = CertificateInputs {
            system: "scalar".into(),
            eta_star: -1.0,
            witness: None,
            families: Vec::new(),
            breakdown: br,
            policy: LPolicy::Composite,
            eps: 0.01,
            mode: EnumerationMode::Exhaustive,
            counts: None,
            diag_residual: 0.0,
            lmi: LmiStatus::reported_pd(),
            evaluated_hashes: HashChain::default(),
            expected_hashes: HashChain::default(),
            notes: Vec::new(),
        };
        let c = issue_certificate(base.clone()).unwrap();
        assert!(c.valid);
        assert_eq!(c.to_json(), issue_certificate(base.clone()).unwrap().to_json());
        let audit = CertificateInputs { mode: EnumerationMode::Audit { count: 10, seed: 1 }, ..base.clone() };
        assert!(!issue_certificate(audit).unwrap().valid);
        let bad = CertificateInputs {
            expected_hashes: HashChain { states: "x".into(), ..Default::default() },
            ..base.clone()
        };
        assert!(matches!(issue_certificate(bad), Err(Error::Provenance(_))));
        // margin is linear in eps with slope L
        let m = |eps| issue_certificate(CertificateInputs { eps, ..base.clone() }).unwrap().margin;
        let (a, b, c3) = (m(0.0), m(0.01), m(0.02));
        assert!(((b - a) - (c3 - b)).abs() < 1e-15);
        assert!(((b - a) / 0.01 - br.max).abs() < 1e-9);
    }

    #[test]
    fn dynamics_lipschitz_estimates() {
        let lin = SystemSpec::new(
            "linear",
            1,
            AxisBox::cube(1, -1.0, 1.0).unwrap(),
            AxisBox::cube(1, -1.0, 1.0).unwrap(),
            None,
            0.01,
            0.5,
            0.1,
            Arc::new(FnDynamics::new(|x, u, out| out[0] = 0.5 * x[0] + 0.1 * u[0])),
        )
        .unwrap();
        let e = estimate_dynamics_lipschitz(&lin, 1000, 1);
        assert!((e.lip_x_hat - 0.5).abs() < 1e-6 && (e.lip_u_hat - 0.1).abs() < 1e-6);
        let one = estimate_dynamics_lipschitz(&lin, 1, 1);
        assert!(one.lip_x_hat <= 0.5 + 1e-9);

        let s = estimate_dynamics_lipschitz(&make_benchmark(Benchmark::Scalar), 100_000, 2);
        assert!(s.lip_x_hat > 1.0 && s.lip_x_hat <= 1.001 + 1e-9);
        assert!(!s.warnings.is_empty());
    }
}
