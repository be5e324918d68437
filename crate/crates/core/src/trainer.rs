//! Joint training of the Lyapunov candidate, the controller, the LMI
//! multipliers and the level `eta`.
//!
//! Every epoch draws `batches_per_epoch` batches and takes one optimizer step
//! per batch. Every `check_every` epochs (and after the last one) the full
//! constraint set is enumerated, `eta` is replaced by the exact optimum
//! `eta*` for the current networks, and the convergence criteria are tested.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classk_barrier::ClassKBundle;
use crate::error::{Error, Result};
use crate::lmi::{lmi_loss_and_grads, LmiContext};
use crate::losses::{loss_v, total_loss, weighted_loss_grad, LossReport, LossWeights, Problem, Reduction, Scope, SubLosses, LOG_HEADER};
use crate::nets::{Activation, LyapunovNet, Mlp, VForm};
use crate::provenance::substream_rng;
use crate::sampling::{BatchPlan, BatchSource, CoverDataset};
use crate::systems::{AxisBox, SystemSpec};
use crate::verifier::{composite_lipschitz, evaluate_eta, lmi_status, network_bounds, EtaEvaluation, EvalOptions, LipTargets, LmiStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

/// Network shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetArch {
    pub v_form: VForm,
    pub v_hidden: Vec<usize>,
    /// Embedding width of the squared form; ignored for the raw form.
    #[serde(default = "default_embed")]
    pub v_embed: usize,
    pub v_activation: Activation,
    pub g_hidden: Vec<usize>,
    pub g_activation: Activation,
    /// Saturation `[lo, hi]` applied to every controller output.
    #[serde(default)]
    pub g_clamp: Option<[f64; 2]>,
}

fn default_embed() -> usize {
    4
}

impl Default for NetArch {
    fn default() -> Self {
        NetArch {
            v_form: VForm::Raw,
            v_hidden: vec![40],
            v_embed: 4,
            v_activation: Activation::Relu,
            g_hidden: vec![15],
            g_activation: Activation::Relu,
            g_clamp: None,
        }
    }
}

impl NetArch {
    /// Zero-initialized networks for `sys`.
    pub fn build(&self, sys: &SystemSpec) -> Result<(LyapunovNet, Mlp)> {
        let n = sys.state_dim;
        let v = match self.v_form {
            VForm::Raw => LyapunovNet::raw(n, &self.v_hidden, self.v_activation)?,
            VForm::Squared => LyapunovNet::squared(n, &self.v_hidden, self.v_embed, self.v_activation)?,
        };
        let mut sizes = vec![n + sys.external_input_dim];
        sizes.extend_from_slice(&self.g_hidden);
        sizes.push(sys.internal_input_dim);
        let clamp = match self.g_clamp {
            Some([lo, hi]) => Some(AxisBox::cube(sys.internal_input_dim, lo, hi)?),
            None => None,
        };
        let g = Mlp::zeros(&sizes, self.g_activation)?.with_clamp(clamp)?;
        Ok((v, g))
    }
}

/// Every training constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// State covering radius entering the margin loss.
    pub eps: f64,
    pub weights: LossWeights,
    pub bundle: ClassKBundle,
    pub lip_targets: LipTargets,
    pub arch: NetArch,
    pub epochs: usize,
    #[serde(default = "one_usize")]
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "beta1")]
    pub adam_beta1: f64,
    #[serde(default = "beta2")]
    pub adam_beta2: f64,
    #[serde(default = "adam_eps")]
    pub adam_eps: f64,
    /// Set from the run seed, never read from a config block.
    #[serde(skip)]
    pub seed: u64,
    #[serde(default = "residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "diag_frac")]
    pub diagonal_fraction: f64,
    #[serde(default = "nn_frac")]
    pub nn_fraction: f64,
    #[serde(default = "check_every")]
    pub check_every: usize,
    #[serde(default)]
    pub reduction: Reduction,
    /// Uniform init half-width times `sqrt(fan_in)`.
    #[serde(default = "one_f64")]
    pub init_scale: f64,
    #[serde(default = "one_f64")]
    pub lambda_init: f64,
    #[serde(default)]
    pub eta_init: f64,
    /// Wall-clock column in the log; off keeps logs byte-identical across runs.
    #[serde(default)]
    pub log_wall_time: bool,
}

fn one_usize() -> usize {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}
fn residual_tol() -> f64 {
    1e-5
}
fn diag_frac() -> f64 {
    0.1
}
fn nn_frac() -> f64 {
    0.3
}
fn check_every() -> usize {
    10
}

impl HyperParams {
    /// Constants of the scalar case study with a small epoch budget.
    pub fn scalar_default() -> Self {
        HyperParams {
            eps: 0.00039,
            weights: LossWeights::default(),
            bundle: ClassKBundle::new([1e-5, 0.5, 1e-4, 0.01], [2.0; 4], 1.0).expect("valid bundle"),
            lip_targets: LipTargets {
                lyapunov: 1.0,
                controller: 20.0,
                barrier: 1.0,
            },
            arch: NetArch::default(),
            epochs: 100,
            batches_per_epoch: 1,
            batch_size: 256,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            adam_beta1: beta1(),
            adam_beta2: beta2(),
            adam_eps: adam_eps(),
            seed: 0,
            residual_tol: residual_tol(),
            diagonal_fraction: diag_frac(),
            nn_fraction: nn_frac(),
            check_every: check_every(),
            reduction: Reduction::Sum,
            init_scale: 1.0,
            lambda_init: 1.0,
            eta_init: 0.0,
            log_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batches_per_epoch == 0 || self.batch_size == 0 || self.check_every == 0 {
            return Err(Error::invalid("batch size, batches per epoch and check interval must be positive"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam constants need beta in [0, 1) and eps > 0"));
        }
        if !(self.residual_tol.is_finite() && self.residual_tol >= 0.0) {
            return Err(Error::invalid("residual_tol must be non-negative"));
        }
        let t = &self.lip_targets;
        if [t.lyapunov, t.controller, t.barrier].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("Lipschitz targets must be positive"));
        }
        if !(self.init_scale > 0.0 && self.lambda_init > 0.0) || !self.eta_init.is_finite() {
            return Err(Error::invalid("init_scale and lambda_init must be positive, eta_init finite"));
        }
        self.weights.validate()?;
        self.bundle.validate()
    }

    fn plan(&self) -> BatchPlan {
        BatchPlan {
            size: self.batch_size,
            diagonal_fraction: self.diagonal_fraction,
            nn_fraction: self.nn_fraction,
        }
    }
}

/// Outcome of the convergence test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convergence {
    pub done: bool,
    /// Failing criteria, `"converged"` when none.
    pub reason: String,
}

/// `L_total <= tol`, `L_v = 0` and both LMIs positive definite.
pub fn convergence_check(report: &LossReport, lmi: &LmiStatus, residual_tol: f64) -> Convergence {
    let mut failing = Vec::new();
    if !(report.total <= residual_tol) {
        failing.push("residual");
    }
    if report.l_v != 0.0 {
        failing.push("validity margin");
    }
    if !lmi.both_pd() {
        failing.push("lmi");
    }
    Convergence {
        done: failing.is_empty(),
        reason: if failing.is_empty() {
            "converged".into()
        } else {
            failing.join(", ")
        },
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub v: LyapunovNet,
    pub g: Mlp,
    pub lambda_v: Vec<f64>,
    pub lambda_g: Vec<f64>,
    /// `eta*` of the final networks.
    pub eta: f64,
    /// The optimizer's `eta` just before the final replacement by `eta*`.
    pub eta_trained: f64,
    pub history: Vec<LossReport>,
    pub convergence: Convergence,
    pub epochs_run: usize,
    pub final_eval: EtaEvaluation,
    pub final_report: LossReport,
    pub lmi: LmiStatus,
}

impl TrainedPair {
    pub fn log_csv(&self) -> String {
        log_csv(&self.history)
    }
}

pub fn log_csv(history: &[LossReport]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Flat parameter vector `[V | g | s_v | s_g | eta]` with `Lambda = s^2`.
struct Layout {
    nv: usize,
    ng: usize,
    hv: usize,
    hg: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.nv + self.ng + self.hv + self.hg + 1
    }
    fn g(&self) -> usize {
        self.nv
    }
    fn sv(&self) -> usize {
        self.nv + self.ng
    }
    fn sg(&self) -> usize {
        self.sv() + self.hv
    }
    fn eta(&self) -> usize {
        self.sg() + self.hg
    }
}

struct State {
    v: LyapunovNet,
    g: Mlp,
    s_v: Vec<f64>,
    s_g: Vec<f64>,
    eta: f64,
}

impl State {
    fn flat(&self, lay: &Layout) -> Vec<f64> {
        let mut p = Vec::with_capacity(lay.len());
        p.extend_from_slice(self.v.net.params());
        p.extend_from_slice(self.g.params());
        p.extend_from_slice(&self.s_v);
        p.extend_from_slice(&self.s_g);
        p.push(self.eta);
        p
    }

    fn load(&mut self, lay: &Layout, p: &[f64]) {
        self.v.net.params_mut().copy_from_slice(&p[..lay.g()]);
        self.g.params_mut().copy_from_slice(&p[lay.g()..lay.sv()]);
        self.s_v.copy_from_slice(&p[lay.sv()..lay.sg()]);
        self.s_g.copy_from_slice(&p[lay.sg()..lay.eta()]);
        self.eta = p[lay.eta()];
    }

    fn lambdas(&self) -> (Vec<f64>, Vec<f64>) {
        (self.s_v.iter().map(|s| s * s).collect(), self.s_g.iter().map(|s| s * s).collect())
    }

    fn lmi(&self, hp: &HyperParams, sys: &SystemSpec) -> Result<LmiStatus> {
        let (lv, lg) = self.lambdas();
        lmi_status(&self.v, &self.g, &lv, &lg, &hp.lip_targets, sys)
    }
}

/// Adam or plain gradient descent over a flat vector.
struct Opt {
    kind: Optimizer,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Opt {
    fn new(hp: &HyperParams, len: usize) -> Self {
        Opt {
            kind: hp.optimizer,
            lr: hp.learning_rate,
            b1: hp.adam_beta1,
            b2: hp.adam_beta2,
            eps: hp.adam_eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// The update to subtract from the parameters.
    fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        match self.kind {
            Optimizer::Sgd => grad.iter().map(|g| self.lr * g).collect(),
            Optimizer::Adam => {
                self.t += 1;
                let c1 = 1.0 - self.b1.powi(self.t);
                let c2 = 1.0 - self.b2.powi(self.t);
                let mut d = Vec::with_capacity(grad.len());
                for i in 0..grad.len() {
                    self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * grad[i];
                    self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * grad[i] * grad[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    d.push(self.lr * mh / (vh.sqrt() + self.eps));
                }
                d
            }
        }
    }
}

/// Initial networks and multipliers; weights are halved until both LMIs are feasible.
fn init_state(sys: &SystemSpec, hp: &HyperParams) -> Result<State> {
    let (mut v, mut g) = hp.arch.build(sys)?;
    let mut rng = substream_rng(hp.seed, "init");
    v.net.init_uniform(&mut rng, hp.init_scale);
    g.init_uniform(&mut rng, hp.init_scale);
    let s0 = hp.lambda_init.sqrt();
    let hv: usize = v.net.hidden_sizes().iter().sum();
    let hg: usize = g.hidden_sizes().iter().sum();
    let mut st = State {
        v,
        g,
        s_v: vec![s0; hv],
        s_g: vec![s0; hg],
        eta: hp.eta_init,
    };
    for _ in 0..60 {
        let lmi = st.lmi(hp, sys)?;
        if lmi.both_pd() {
            return Ok(st);
        }
        if !lmi.lyapunov.is_pd {
            st.v.net.params_mut().iter_mut().for_each(|p| *p *= 0.5);
        }
        if !lmi.controller.is_pd {
            st.g.params_mut().iter_mut().for_each(|p| *p *= 0.5);
        }
    }
    Err(Error::TrainingFailed(
        "no feasible initialization of the Lipschitz LMIs; raise lambda_init or the targets".into(),
    ))
}

/// One batch: loss report and gradient of the full objective.
fn batch_step(
    st: &State,
    lay: &Layout,
    prob: &Problem<'_>,
    hp: &HyperParams,
    batch: &[crate::sampling::BatchTuple],
    l_comp: f64,
) -> Result<(SubLosses, f64, f64, Vec<f64>)> {
    let be = weighted_loss_grad(batch, prob, &st.v, &st.g, st.eta, &hp.weights, hp.reduction)?;
    let (lam_v, lam_g) = st.lambdas();
    let (bv, bg) = network_bounds(&st.v, &hp.lip_targets, prob.sys);
    let lm = lmi_loss_and_grads(
        &LmiContext::new(&st.v.net, &lam_v, bv)?,
        &LmiContext::new(&st.g, &lam_g, bg)?,
        hp.weights.cl1,
        hp.weights.cl2,
    )
    .map_err(|e| Error::TrainingFailed(format!("LMI left the feasible set: {e}")))?;
    let lv = loss_v(st.eta, l_comp, hp.eps);
    let mut grad = vec![0.0; lay.len()];
    for i in 0..lay.nv {
        grad[i] = be.d_v[i] + lm.d_v_params[i];
    }
    for i in 0..lay.ng {
        grad[lay.g() + i] = be.d_g[i] + lm.d_g_params[i];
    }
    for i in 0..lay.hv {
        grad[lay.sv() + i] = 2.0 * st.s_v[i] * lm.d_v_lambda[i];
    }
    for i in 0..lay.hg {
        grad[lay.sg() + i] = 2.0 * st.s_g[i] * lm.d_g_lambda[i];
    }
    grad[lay.eta()] = be.d_eta + if lv > 0.0 { hp.weights.cv } else { 0.0 };
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("non-finite training gradient"));
    }
    Ok((be.sub, lm.value, lv, grad))
}

/// Exhaustive pass at the current networks. Replaces `eta` by `eta*` and
/// returns the full-scope report; every hinge at `eta*` vanishes except the diagonal one.
fn full_check(
    st: &mut State,
    prob: &Problem<'_>,
    hp: &HyperParams,
    epoch: usize,
    l_comp: f64,
    lmi: &LmiStatus,
) -> Result<(EtaEvaluation, LossReport)> {
    let ev = evaluate_eta(
        prob.sys,
        &st.v,
        &st.g,
        prob.xs,
        prob.ws,
        &prob.bundle,
        &prob.barrier,
        &EvalOptions {
            eta_ref: st.eta,
            force: true,
            ..Default::default()
        },
    )?;
    st.eta = ev.eta_star;
    let sub = SubLosses([ev.diag_hinge, 0.0, 0.0, 0.0, 0.0]);
    let l_m = match (lmi.lyapunov.logdet, lmi.controller.logdet) {
        (Some(a), Some(b)) => -hp.weights.cl1 * a - hp.weights.cl2 * b,
        _ => f64::INFINITY,
    };
    let rep = LossReport {
        epoch,
        scope: Scope::Full,
        sub,
        total: total_loss(&sub, &hp.weights),
        l_m,
        l_v: loss_v(st.eta, l_comp, hp.eps),
        eta: st.eta,
        batch_size: prob.xs.count(),
        wall_time: None,
    };
    Ok((ev, rep))
}

/// Runs the training loop.
pub fn train(sys: &SystemSpec, xs: &CoverDataset, ws: &CoverDataset, hp: &HyperParams) -> Result<TrainedPair> {
    hp.validate()?;
    let prob = Problem::new(sys, xs, ws, hp.bundle)?;
    let l_comp = composite_lipschitz(&hp.lip_targets, &hp.bundle, sys).max;
    let mut st = init_state(sys, hp)?;
    let lay = Layout {
        nv: st.v.net.num_params(),
        ng: st.g.num_params(),
        hv: st.s_v.len(),
        hg: st.s_g.len(),
    };
    let mut opt = Opt::new(hp, lay.len());
    let source = BatchSource::new(xs, ws);
    let mut rng = substream_rng(hp.seed, "batching");
    let plan = hp.plan();
    let start = Instant::now();
    let stamp = |t: &Instant| if hp.log_wall_time { Some(t.elapsed().as_secs_f64()) } else { None };
    let mut history = Vec::new();
    let mut last = None;

    for epoch in 1..=hp.epochs {
        for _ in 0..hp.batches_per_epoch {
            let batch = source.draw(&plan, &mut rng)?;
            let (sub, l_m, l_v, grad) = batch_step(&st, &lay, &prob, hp, &batch, l_comp)?;
            history.push(LossReport {
                epoch,
                scope: Scope::Batch,
                sub,
                total: total_loss(&sub, &hp.weights),
                l_m,
                l_v,
                eta: st.eta,
                batch_size: batch.len(),
                wall_time: stamp(&start),
            });
            let delta = opt.step(&grad);
            let base = st.flat(&lay);
            let mut accepted = false;
            let mut scale = 1.0;
            for _ in 0..=30 {
                let trial: Vec<f64> = base.iter().zip(&delta).map(|(p, d)| p - scale * d).collect();
                st.load(&lay, &trial);
                if st.lmi(hp, sys)?.both_pd() {
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                st.load(&lay, &base);
                return Err(Error::TrainingFailed(format!(
                    "epoch {epoch}: Lipschitz LMI stays infeasible after 30 step halvings (eta = {})",
                    st.eta
                )));
            }
        }
        if epoch % hp.check_every == 0 || epoch == hp.epochs {
            let eta_trained = st.eta;
            let lmi = st.lmi(hp, sys)?;
            let (ev, mut rep) = full_check(&mut st, &prob, hp, epoch, l_comp, &lmi)?;
            rep.wall_time = stamp(&start);
            history.push(rep.clone());
            let conv = convergence_check(&rep, &lmi, hp.residual_tol);
            let done = conv.done;
            last = Some((ev, rep, lmi, conv, eta_trained, epoch));
            if done {
                break;
            }
        }
    }

    let (final_eval, final_report, lmi, convergence, eta_trained, epochs_run) = last.expect("the last epoch always runs a check");
    let (lambda_v, lambda_g) = st.lambdas();
    Ok(TrainedPair {
        eta: st.eta,
        v: st.v,
        g: st.g,
        lambda_v,
        lambda_g,
        eta_trained,
        history,
        convergence,
        epochs_run,
        final_eval,
        final_report,
        lmi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::sub_losses;
    use crate::sampling::{cover_box, draw_batch, DEFAULT_MAX_POINTS};
    use crate::systems::{make_benchmark, Benchmark};

    fn small_hp() -> HyperParams {
        HyperParams {
            eps: 0.1,
            epochs: 20,
            batch_size: 64,
            check_every: 10,
            seed: 5,
            arch: NetArch {
                v_hidden: vec![8],
                g_hidden: vec![6],
                ..NetArch::default()
            },
            ..HyperParams::scalar_default()
        }
    }

    fn data(sys: &SystemSpec) -> (CoverDataset, CoverDataset) {
        (
            cover_box(&sys.state_box, 0.1, DEFAULT_MAX_POINTS).unwrap(),
            cover_box(&sys.external_box, 0.25, DEFAULT_MAX_POINTS).unwrap(),
        )
    }

    fn report(total: f64, l_v: f64) -> LossReport {
        LossReport {
            epoch: 1,
            scope: Scope::Full,
            sub: SubLosses::default(),
            total,
            l_m: 0.0,
            l_v,
            eta: 0.0,
            batch_size: 1,
            wall_time: None,
        }
    }

    #[test]
    fn convergence_reasons() {
        let pd = LmiStatus::reported_pd();
        assert!(convergence_check(&report(0.0, 0.0), &pd, 1e-5).done);
        let c = convergence_check(&report(0.0, 0.001), &pd, 1e-5);
        assert!(!c.done && c.reason == "validity margin");
        let c = convergence_check(&report(2e-5, 0.0), &pd, 1e-5);
        assert!(!c.done && c.reason == "residual");
        let mut bad = pd.clone();
        bad.controller.is_pd = false;
        assert_eq!(convergence_check(&report(0.0, 0.0), &bad, 1e-5).reason, "lmi");
    }

    #[test]
    fn zero_epochs_rejected() {
        let sys = make_benchmark(Benchmark::Scalar);
        let (xs, ws) = data(&sys);
        let hp = HyperParams { epochs: 0, ..small_hp() };
        assert!(matches!(train(&sys, &xs, &ws, &hp), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let sys = make_benchmark(Benchmark::Scalar);
        let (xs, ws) = data(&sys);
        for optimizer in [Optimizer::Adam, Optimizer::Sgd] {
            let hp = HyperParams {
                learning_rate: 0.0,
                optimizer,
                epochs: 3,
                check_every: 100,
                ..small_hp()
            };
            let st = init_state(&sys, &hp).unwrap();
            let tp = train(&sys, &xs, &ws, &hp).unwrap();
            assert_eq!(tp.v.net.params(), st.v.net.params());
            assert_eq!(tp.g.params(), st.g.params());
            assert_eq!(tp.eta_trained, hp.eta_init);
        }
    }

    #[test]
    fn small_steps_decrease_fixed_batch_loss() {
        let sys = make_benchmark(Benchmark::Scalar);
        let (xs, ws) = data(&sys);
        let hp = HyperParams {
            learning_rate: 1e-4,
            optimizer: Optimizer::Sgd,
            ..small_hp()
        };
        let prob = Problem::new(&sys, &xs, &ws, hp.bundle).unwrap();
        let batch = draw_batch(&xs, &ws, &hp.plan(), 3).unwrap();
        let mut st = init_state(&sys, &hp).unwrap();
        let lay = Layout {
            nv: st.v.net.num_params(),
            ng: st.g.num_params(),
            hv: st.s_v.len(),
            hg: st.s_g.len(),
        };
        let obj = |st: &State| {
            let sub = sub_losses(&batch, &prob, &st.v, &st.g, st.eta, hp.reduction).unwrap();
            let (_, l_m, _, _) = batch_step(st, &lay, &prob, &hp, &batch, 1.0).unwrap();
            total_loss(&sub, &hp.weights) + l_m + hp.weights.cv * loss_v(st.eta, 1.0, hp.eps)
        };
        let mut prev = obj(&st);
        for _ in 0..10 {
            let (_, _, _, grad) = batch_step(&st, &lay, &prob, &hp, &batch, 1.0).unwrap();
            let p: Vec<f64> = st.flat(&lay).iter().zip(&grad).map(|(p, g)| p - 1e-4 * g).collect();
            st.load(&lay, &p);
            let cur = obj(&st);
            assert!(cur <= prev + 1e-12, "{cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn training_is_deterministic_and_polishes_eta() {
        let sys = make_benchmark(Benchmark::Scalar);
        let (xs, ws) = data(&sys);
        let hp = small_hp();
        let a = train(&sys, &xs, &ws, &hp).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| train(&sys, &xs, &ws, &hp).unwrap());
        assert_eq!(a.log_csv(), b.log_csv());
        assert_eq!(a.eta, a.final_eval.eta_star);
        assert!(a.lmi.both_pd());
        assert_eq!(a.history.iter().filter(|r| r.scope == Scope::Full).count(), 2);
        assert_eq!(a.history.len(), 22);
    }

    #[test]
    fn hyperparams_toml_round_trip() {
        let hp = small_hp();
        let s = toml::to_string(&hp).unwrap();
        let back: HyperParams = toml::from_str(&s).unwrap();
        assert_eq!(HyperParams { seed: hp.seed, ..back }, hp);
        assert_eq!(back.seed, 0);
        assert!(toml::from_str::<HyperParams>(&format!("bogus = 1\n{s}")).is_err());
    }
}
