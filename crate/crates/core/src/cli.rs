//! Command-line pipeline: `sample`, `train`, `verify`, `simulate`, `report`.
//!
//! A run directory holds
//!
//! ```text
//! config.toml                 effective configuration
//! data/{x,w}.csv, *.meta.json datasets and their hashes
//! sample_manifest.json        audit results, dataset hashes
//! weights/{v,g}.json          networks (self-hashing)
//! weights/multipliers.json    LMI multipliers
//! train_log.csv               batch and full-pass losses
//! train_manifest.json         convergence checklist, hash chain
//! certificate.json
//! sim/                        trajectories, metrics, charts, summary
//! report.txt, report.svg
//! ```
//!
//! Exit codes: 0 success, 1 invalid certificate or other failure,
//! 2 training failed, 3 provenance, 4 enumeration cap.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::classk_barrier::BarrierFn;
use crate::error::{Error, Result};
use crate::losses::Scope;
use crate::nets::{LyapunovNet, Mlp, WeightsDoc};
use crate::provenance::{build_describe, sha256_hex};
use crate::rollout::{contraction_study, divergence_metrics, invariance_sweep, simulate, svg_chart, ContractionReport, InvarianceReport, Signal};
use crate::sampling::{cover_box, covering_audit, AuditReport, CoverDataset, DatasetMeta, DEFAULT_MAX_POINTS};
use crate::systems::{make_benchmark_named, AxisBox, SystemSpec};
use crate::trainer::{train, HyperParams};
use crate::verifier::{
    composite_lipschitz, estimate_dynamics_lipschitz, evaluate_eta, issue_certificate, lmi_status, Certificate, CertificateInputs, EnumerationMode, EvalOptions, HashChain,
    LPolicy, LmiStatus, DEFAULT_ENUMERATION_CAP,
};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "INCSTAB_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantBlock {
    pub benchmark: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal_box: Option<Vec<[f64; 2]>>,
}

impl PlantBlock {
    pub fn build(&self) -> Result<SystemSpec> {
        let mut sys = make_benchmark_named(&self.benchmark)?;
        if let Some(v) = self.lip_x {
            sys.lip_x = v;
        }
        if let Some(v) = self.lip_u {
            sys.lip_u = v;
        }
        if let Some(b) = &self.internal_box {
            sys = sys.with_internal_box(Some(AxisBox::from_pairs(b)?))?;
        }
        Ok(sys)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBlock {
    pub eps_x: f64,
    pub eps_w: f64,
    #[serde(default = "audit_trials")]
    pub audit_trials: usize,
    #[serde(default = "max_points")]
    pub max_points: u64,
}

fn audit_trials() -> usize {
    100_000
}
fn max_points() -> u64 {
    DEFAULT_MAX_POINTS as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    /// `exhaustive` or `audit:<count>`.
    #[serde(default = "exhaustive")]
    pub mode: String,
    #[serde(default)]
    pub force: bool,
    #[serde(default)]
    pub l_policy: LPolicy,
    /// Constant used under the reference policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_l: Option<f64>,
    /// Sampled pairs for the plant Lipschitz check.
    #[serde(default = "lip_pairs")]
    pub lipschitz_pairs: usize,
}

fn exhaustive() -> String {
    "exhaustive".into()
}
fn lip_pairs() -> usize {
    10_000
}

impl Default for VerifyBlock {
    fn default() -> Self {
        VerifyBlock {
            mode: exhaustive(),
            force: false,
            l_policy: LPolicy::Composite,
            reference_l: None,
            lipschitz_pairs: lip_pairs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub x0: Vec<f64>,
    /// Second start for a paired run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_hat: Option<Vec<f64>>,
    pub signal: Signal,
    /// External input of the second run, `signal` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_hat: Option<Signal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    #[serde(default = "steps")]
    pub steps: usize,
    /// Random start pairs for the contraction study.
    #[serde(default = "pairs")]
    pub pairs: usize,
    /// Random rollouts for the invariance sweep.
    #[serde(default = "rollouts")]
    pub rollouts: usize,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
}

fn steps() -> usize {
    2000
}
fn pairs() -> usize {
    100
}
fn rollouts() -> usize {
    1000
}

impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock {
            steps: steps(),
            pairs: pairs(),
            rollouts: rollouts(),
            scenarios: Vec::new(),
        }
    }
}

/// Everything a run needs. Parse, serialize and parse again is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub plant: PlantBlock,
    pub sampling: SamplingBlock,
    pub train: HyperParams,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub simulate: SimulateBlock,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let eps = self.sampling.eps_x.max(self.sampling.eps_w);
        if self.train.eps != eps {
            return Err(Error::Config(format!(
                "train.eps = {} differs from max(eps_x, eps_w) = {eps}",
                self.train.eps
            )));
        }
        if !(self.sampling.eps_w > 0.0 && self.sampling.eps_x > 0.0) {
            return Err(Error::Config("covering radii must be positive".into()));
        }
        EnumerationMode::parse(&self.verify.mode, self.seed).map_err(|e| Error::Config(e.to_string()))?;
        self.plant.build()?;
        self.hyperparams().validate()
    }

    /// Training constants with the run seed.
    pub fn hyperparams(&self) -> HyperParams {
        HyperParams {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Hash of the blocks that determine the datasets.
    pub fn sampling_hash(&self) -> String {
        #[derive(Serialize)]
        struct S<'a> {
            plant: &'a PlantBlock,
            sampling: &'a SamplingBlock,
        }
        let s = toml::to_string(&S {
            plant: &self.plant,
            sampling: &self.sampling,
        })
        .expect("serializes");
        sha256_hex(s.as_bytes())
    }

    /// Hash of the blocks that determine the trained networks.
    pub fn training_hash(&self) -> String {
        #[derive(Serialize)]
        struct T<'a> {
            seed: u64,
            plant: &'a PlantBlock,
            sampling: &'a SamplingBlock,
            train: &'a HyperParams,
        }
        let s = toml::to_string(&T {
            seed: self.seed,
            plant: &self.plant,
            sampling: &self.sampling,
            train: &self.train,
        })
        .expect("serializes");
        sha256_hex(s.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub build: String,
    pub sampling_hash: String,
    pub states: DatasetMeta,
    pub inputs: DatasetMeta,
    pub audit_states: AuditReport,
    pub audit_inputs: AuditReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambda_v: Vec<f64>,
    pub lambda_g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checklist {
    pub residual: bool,
    pub validity_margin: bool,
    pub lmi_lyapunov: bool,
    pub lmi_controller: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub build: String,
    pub sampling_hash: String,
    pub training_hash: String,
    pub states_hash: String,
    pub inputs_hash: String,
    pub lyapunov_hash: String,
    pub controller_hash: String,
    pub multipliers_hash: String,
    pub log_hash: String,
    pub converged: bool,
    pub reason: String,
    pub checklist: Checklist,
    pub epochs_run: usize,
    pub eta: f64,
    pub eta_trained: f64,
    pub final_total: f64,
    pub final_l_m: f64,
    pub final_l_v: f64,
    pub residual_tol: f64,
    pub composite_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub contraction: ContractionReport,
    pub invariance: InvarianceReport,
    pub scenarios: Vec<ScenarioSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub exits: usize,
    pub gap_start: Option<f64>,
    pub gap_end: Option<f64>,
    /// Largest gap over the last tenth of the run.
    pub gap_tail_max: Option<f64>,
}

#[derive(Debug, Parser)]
#[command(name = "incstab", version, about = "Train and certify neural incremental ISS controllers")]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory; defaults to the config's `out`, then `$INCSTAB_OUT/<name>`, then `runs/<name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and audit the state and input datasets.
    Sample(RunArgs),
    /// Train both networks on the sampled datasets.
    Train(RunArgs),
    /// Enumerate the constraints and issue a certificate.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Allow enumerations above the cap.
        #[arg(long)]
        force: bool,
        /// `exhaustive` or `audit:<count>`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Closed-loop rollouts, contraction and invariance checks.
    Simulate(RunArgs),
    /// Summarize one run directory or a directory of runs.
    Report {
        dir: Option<PathBuf>,
    },
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::TrainingFailed(_) | Error::InfeasibleBarrier(_) => 2,
        Error::Provenance(_) => 3,
        Error::EnumerationCap { .. } => 4,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let go = move || match cli.command {
        Command::Sample(a) => cmd_sample(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Verify { run, force, mode } => cmd_verify(&run, force, mode.as_deref()),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| "runs".into()));
            let text = cmd_report(&dir)?;
            print!("{text}");
            Ok(0)
        }
    };
    match cli.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?
            .install(go),
        None => go(),
    }
}

/// Loads the config, applies `--seed` and resolves the run directory.
pub fn resolve(a: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = match (&a.out, &cfg.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => PathBuf::from(o),
        (None, None) => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(&cfg.name),
    };
    Ok((cfg, out))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write(path, &s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Provenance(format!("missing artifact {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn cmd_sample(a: &RunArgs) -> Result<i32> {
    let (cfg, out) = resolve(a)?;
    let sys = cfg.plant.build()?;
    let cap = cfg.sampling.max_points as u128;
    let xs = cover_box(&sys.state_box, cfg.sampling.eps_x, cap)?;
    let ws = cover_box(&sys.external_box, cfg.sampling.eps_w, cap)?;
    let data = out.join("data");
    std::fs::create_dir_all(&data).map_err(|e| Error::io(&data, e))?;
    write(&out.join("config.toml"), &cfg.to_toml())?;
    let states = xs.save(&data, "x", "x")?;
    let inputs = ws.save(&data, "w", "w")?;
    let audit_states = covering_audit(&xs, cfg.sampling.audit_trials, cfg.seed);
    let audit_inputs = covering_audit(&ws, cfg.sampling.audit_trials, cfg.seed.wrapping_add(1));
    let ok = audit_states.passed && audit_inputs.passed;
    write_json(
        &out.join("sample_manifest.json"),
        &SampleManifest {
            build: build_describe().into(),
            sampling_hash: cfg.sampling_hash(),
            states,
            inputs,
            audit_states,
            audit_inputs,
        },
    )?;
    println!(
        "sampled {} states (eps {}) and {} inputs (eps {}) into {}",
        xs.count(),
        xs.eps,
        ws.count(),
        ws.eps,
        data.display()
    );
    println!(
        "covering audit: states {} (worst {:.6}), inputs {} (worst {:.6})",
        pass(audit_states.passed),
        audit_states.worst_distance,
        pass(audit_inputs.passed),
        audit_inputs.worst_distance
    );
    Ok(if ok { 0 } else { 1 })
}

fn pass(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

/// Datasets of a run, checked against the sample manifest and the config.
pub fn load_datasets(cfg: &RunConfig, out: &Path) -> Result<(CoverDataset, CoverDataset, SampleManifest)> {
    let man: SampleManifest = read_json(&out.join("sample_manifest.json"))?;
    if man.sampling_hash != cfg.sampling_hash() {
        return Err(Error::Provenance("datasets were sampled under a different plant or sampling block".into()));
    }
    let data = out.join("data");
    let (xs, xm) = CoverDataset::load(&data, "x")?;
    let (ws, wm) = CoverDataset::load(&data, "w")?;
    if xm.content_hash != man.states.content_hash || wm.content_hash != man.inputs.content_hash {
        return Err(Error::Provenance("dataset files do not match the sample manifest".into()));
    }
    if !(man.audit_states.passed && man.audit_inputs.passed) {
        return Err(Error::Provenance("datasets failed the covering audit".into()));
    }
    Ok((xs, ws, man))
}

pub fn cmd_train(a: &RunArgs) -> Result<i32> {
    let (cfg, out) = resolve(a)?;
    let sys = cfg.plant.build()?;
    let (xs, ws, sm) = load_datasets(&cfg, &out)?;
    let hp = cfg.hyperparams();
    let tp = train(&sys, &xs, &ws, &hp)?;
    let wdir = out.join("weights");
    let vdoc = tp.v.weights_doc();
    let gdoc = tp.g.weights_doc(None);
    std::fs::create_dir_all(&wdir).map_err(|e| Error::io(&wdir, e))?;
    vdoc.save(&wdir.join("v.json"))?;
    gdoc.save(&wdir.join("g.json"))?;
    let mult = Multipliers {
        lambda_v: tp.lambda_v.clone(),
        lambda_g: tp.lambda_g.clone(),
    };
    let mult_text = serde_json::to_string_pretty(&mult)? + "\n";
    write(&wdir.join("multipliers.json"), &mult_text)?;
    let log = tp.log_csv();
    write(&out.join("train_log.csv"), &log)?;
    let r = &tp.final_report;
    let checklist = Checklist {
        residual: r.total <= hp.residual_tol,
        validity_margin: r.l_v == 0.0,
        lmi_lyapunov: tp.lmi.lyapunov.is_pd,
        lmi_controller: tp.lmi.controller.is_pd,
    };
    let l_comp = composite_lipschitz(&hp.lip_targets, &hp.bundle, &sys).max;
    write_json(
        &out.join("train_manifest.json"),
        &TrainManifest {
            build: build_describe().into(),
            sampling_hash: sm.sampling_hash,
            training_hash: cfg.training_hash(),
            states_hash: xs.content_hash("x"),
            inputs_hash: ws.content_hash("w"),
            lyapunov_hash: vdoc.content_hash.clone(),
            controller_hash: gdoc.content_hash.clone(),
            multipliers_hash: sha256_hex(mult_text.as_bytes()),
            log_hash: sha256_hex(log.as_bytes()),
            converged: tp.convergence.done,
            reason: tp.convergence.reason.clone(),
            checklist: checklist.clone(),
            epochs_run: tp.epochs_run,
            eta: tp.eta,
            eta_trained: tp.eta_trained,
            final_total: r.total,
            final_l_m: r.l_m,
            final_l_v: r.l_v,
            residual_tol: hp.residual_tol,
            composite_l: l_comp,
        },
    )?;
    let mark = |b: bool| if b { "[x]" } else { "[ ]" };
    println!("trained {} epochs; eta* = {:e} (optimizer eta {:e})", tp.epochs_run, tp.eta, tp.eta_trained);
    println!("{} L_total = {:e} <= {:e}", mark(checklist.residual), r.total, hp.residual_tol);
    println!("{} L_v = {:e} (composite L = {l_comp:.6}, eps = {})", mark(checklist.validity_margin), r.l_v, hp.eps);
    println!("{} Lyapunov LMI positive definite", mark(checklist.lmi_lyapunov));
    println!("{} controller LMI positive definite", mark(checklist.lmi_controller));
    println!("converged: {} ({})", tp.convergence.done, tp.convergence.reason);
    Ok(0)
}

/// Networks and multipliers of a run, checked against the train manifest.
pub fn load_trained(cfg: &RunConfig, out: &Path) -> Result<(LyapunovNet, Mlp, Multipliers, TrainManifest)> {
    let man: TrainManifest = read_json(&out.join("train_manifest.json"))?;
    if man.training_hash != cfg.training_hash() {
        return Err(Error::Provenance("weights were trained under a different configuration".into()));
    }
    let wdir = out.join("weights");
    let vdoc = WeightsDoc::load(&wdir.join("v.json")).map_err(as_provenance)?;
    let gdoc = WeightsDoc::load(&wdir.join("g.json")).map_err(as_provenance)?;
    let n = cfg.plant.build()?.state_dim;
    let v = LyapunovNet::from_doc(&vdoc, n)?;
    let g = Mlp::from_doc(&gdoc)?;
    if v.content_hash() != man.lyapunov_hash || g.content_hash() != man.controller_hash {
        return Err(Error::Provenance("weights do not match the train manifest".into()));
    }
    let mtext = std::fs::read_to_string(wdir.join("multipliers.json")).map_err(|e| Error::Provenance(format!("missing multipliers: {e}")))?;
    if sha256_hex(mtext.as_bytes()) != man.multipliers_hash {
        return Err(Error::Provenance("multipliers do not match the train manifest".into()));
    }
    Ok((v, g, serde_json::from_str(&mtext)?, man))
}

fn as_provenance(e: Error) -> Error {
    match e {
        Error::Io { path, source } => Error::Provenance(format!("missing artifact {path}: {source}")),
        other => other,
    }
}

pub fn cmd_verify(a: &RunArgs, force: bool, mode: Option<&str>) -> Result<i32> {
    let (mut cfg, out) = resolve(a)?;
    if let Some(m) = mode {
        cfg.verify.mode = m.to_string();
    }
    let mode = EnumerationMode::parse(&cfg.verify.mode, cfg.seed)?;
    let sys = cfg.plant.build()?;
    let (xs, ws, _) = load_datasets(&cfg, &out)?;
    let (v, g, mult, tm) = load_trained(&cfg, &out)?;
    let hp = cfg.hyperparams();
    let ev = evaluate_eta(
        &sys,
        &v,
        &g,
        &xs,
        &ws,
        &hp.bundle,
        &BarrierFn::new(&sys.state_box),
        &EvalOptions {
            mode,
            eta_ref: 0.0,
            cap: DEFAULT_ENUMERATION_CAP,
            force: force || cfg.verify.force,
        },
    )?;
    let mut breakdown = composite_lipschitz(&hp.lip_targets, &hp.bundle, &sys);
    breakdown.reference = cfg.verify.reference_l;
    let lmi: LmiStatus = lmi_status(&v, &g, &mult.lambda_v, &mult.lambda_g, &hp.lip_targets, &sys)?;
    let expected = HashChain {
        states: tm.states_hash.clone(),
        inputs: tm.inputs_hash.clone(),
        lyapunov: tm.lyapunov_hash.clone(),
        controller: tm.controller_hash.clone(),
    };
    let mut inputs = CertificateInputs::from_evaluation(&sys.name, &ev, breakdown, hp.eps, lmi, expected);
    inputs.policy = cfg.verify.l_policy;
    let dl = estimate_dynamics_lipschitz(&sys, cfg.verify.lipschitz_pairs, cfg.seed);
    inputs.notes.extend(dl.warnings.iter().cloned());
    let cert = issue_certificate(inputs)?;
    write(&out.join("certificate.json"), &cert.to_json())?;
    print_certificate(&cert);
    Ok(if cert.valid { 0 } else { 1 })
}

fn print_certificate(c: &Certificate) {
    println!("system      {}", c.system);
    println!("eta*        {:e}", c.eta_star);
    println!("L terms     {:?}", c.lipschitz.terms);
    println!("L used      {} ({:?})", c.l_used, c.l_policy);
    println!("eps         {}", c.eps);
    println!("margin      {:e}", c.margin);
    println!("mode        {:?}", c.mode);
    println!("valid       {}", c.valid);
    for n in &c.notes {
        println!("note: {n}");
    }
}

pub fn cmd_simulate(a: &RunArgs) -> Result<i32> {
    let (cfg, out) = resolve(a)?;
    let sys = cfg.plant.build()?;
    let (v, g, _, _) = load_trained(&cfg, &out)?;
    let sim = &cfg.simulate;
    let dir = out.join("sim");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut scenarios = Vec::new();
    for sc in &sim.scenarios {
        let w = sc.signal.generate(sim.steps, &sys.external_box);
        let t1 = simulate(&sys, &g, &sc.x0, &w)?;
        write(&dir.join(format!("{}.csv", sc.name)), &t1.to_csv())?;
        let mut summary = ScenarioSummary {
            name: sc.name.clone(),
            exits: t1.exits.len(),
            gap_start: None,
            gap_end: None,
            gap_tail_max: None,
        };
        if let Some(x0h) = &sc.x0_hat {
            let wh = sc.signal_hat.as_ref().unwrap_or(&sc.signal).generate(sim.steps, &sys.external_box);
            let t2 = simulate(&sys, &g, x0h, &wh)?;
            write(&dir.join(format!("{}_hat.csv", sc.name)), &t2.to_csv())?;
            let d = divergence_metrics(&t1, &t2, &v)?;
            write(&dir.join(format!("{}_metrics.csv", sc.name)), &d.to_csv())?;
            write(&dir.join(format!("{}_gap.svg", sc.name)), &svg_chart(&format!("{}: state gap", sc.name), "|x - xhat|", &[("gap", &d.gap)]))?;
            write(&dir.join(format!("{}_v.svg", sc.name)), &svg_chart(&format!("{}: V along the pair", sc.name), "V", &[("V", &d.v)]))?;
            summary.exits += t2.exits.len();
            summary.gap_start = Some(d.gap[0]);
            summary.gap_end = d.gap.last().copied();
            let tail = d.gap.len() - d.gap.len() / 10;
            summary.gap_tail_max = Some(d.gap[tail.min(d.gap.len() - 1)..].iter().copied().fold(0.0, f64::max));
        }
        println!(
            "scenario {}: exits {}, gap {:?} -> {:?}",
            summary.name, summary.exits, summary.gap_start, summary.gap_end
        );
        scenarios.push(summary);
    }
    let contraction = contraction_study(&sys, &g, &v, sim.pairs, sim.steps, cfg.seed)?;
    let invariance = invariance_sweep(&sys, &g, sim.rollouts, sim.steps, cfg.seed)?;
    println!(
        "contraction: median gap({0})/gap(0) = {1:e} over {2} pairs",
        sim.steps, contraction.median_ratio, contraction.pairs
    );
    println!(
        "invariance: {} of {} rollouts left the state box",
        invariance.trajectories_with_exits, invariance.rollouts
    );
    write_json(
        &dir.join("summary.json"),
        &SimSummary {
            contraction,
            invariance,
            scenarios,
        },
    )?;
    Ok(0)
}

/// Run directories under `dir` (itself included), sorted by path.
fn run_dirs(dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    if dir.join("config.toml").is_file() {
        found.push(dir.to_path_buf());
    }
    if let Ok(rd) = std::fs::read_dir(dir) {
        let mut subs: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("config.toml").is_file()).collect();
        subs.sort();
        found.extend(subs);
    }
    found
}

/// Writes `report.txt` and `report.svg` into `dir` and returns the text.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let runs = run_dirs(dir);
    if runs.is_empty() {
        return Ok("nothing to report\n".into());
    }
    let mut s = String::new();
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    let mut margins = Vec::new();
    for run in &runs {
        let name = run.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(s, "== {name}");
        match RunConfig::load(&run.join("config.toml")) {
            Ok(c) => {
                let _ = writeln!(s, "plant {} seed {} eps_x {} eps_w {}", c.plant.benchmark, c.seed, c.sampling.eps_x, c.sampling.eps_w);
            }
            Err(e) => {
                let _ = writeln!(s, "config unreadable: {e}");
            }
        }
        match read_json::<SampleManifest>(&run.join("sample_manifest.json")) {
            Ok(m) => {
                let _ = writeln!(
                    s,
                    "datasets: {} states, {} inputs, audit {}",
                    m.states.count,
                    m.inputs.count,
                    pass(m.audit_states.passed && m.audit_inputs.passed)
                );
            }
            Err(_) => s.push_str("datasets: MISSING\n"),
        }
        match read_json::<TrainManifest>(&run.join("train_manifest.json")) {
            Ok(m) => {
                let _ = writeln!(
                    s,
                    "training: {} epochs, converged {} ({}), L_total {:e}, L_v {:e}, eta* {:e}",
                    m.epochs_run, m.converged, m.reason, m.final_total, m.final_l_v, m.eta
                );
            }
            Err(_) => s.push_str("training: MISSING\n"),
        }
        if let Ok(text) = std::fs::read_to_string(run.join("train_log.csv")) {
            let totals: Vec<f64> = text
                .lines()
                .skip(1)
                .filter(|l| l.contains(",batch,"))
                .filter_map(|l| l.split(',').nth(9).and_then(|v| v.parse().ok()))
                .collect();
            curves.push((name.clone(), totals));
        }
        match read_json::<Certificate>(&run.join("certificate.json")) {
            Ok(c) => {
                let _ = writeln!(
                    s,
                    "certificate: eta* {:e}, L {:.6} (terms {:?}), eps {}, margin {:e}, valid {}",
                    c.eta_star, c.l_used, c.lipschitz.terms, c.eps, c.margin, c.valid
                );
                for n in &c.notes {
                    let _ = writeln!(s, "  note: {n}");
                }
                margins.push((c.system.clone(), c.margin));
            }
            Err(_) => s.push_str("certificate: MISSING\n"),
        }
        match read_json::<SimSummary>(&run.join("sim").join("summary.json")) {
            Ok(m) => {
                let _ = writeln!(
                    s,
                    "rollouts: median contraction {:e} over {} pairs, {} of {} rollouts exited",
                    m.contraction.median_ratio, m.contraction.pairs, m.invariance.trajectories_with_exits, m.invariance.rollouts
                );
            }
            Err(_) => s.push_str("rollouts: MISSING\n"),
        }
        s.push('\n');
    }
    if !margins.is_empty() {
        s.push_str("== margins\n");
        for (sys, m) in &margins {
            let _ = writeln!(s, "{sys:<12} {m:e}");
        }
    }
    let series: Vec<(&str, &[f64])> = curves.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
    write(&dir.join("report.svg"), &svg_chart("batch L_total", "L_total", &series))?;
    write(&dir.join("report.txt"), &s)?;
    Ok(s)
}

/// Full-pass rows of a training log as `(epoch, total, eta)`.
pub fn full_rows(log: &str) -> Vec<(usize, f64, f64)> {
    log.lines()
        .skip(1)
        .filter(|l| l.contains(&format!(",{},", scope_name(Scope::Full))))
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some((f[0].parse().ok()?, f[9].parse().ok()?, f[10].parse().ok()?))
        })
        .collect()
}

fn scope_name(s: Scope) -> &'static str {
    match s {
        Scope::Batch => "batch",
        Scope::Full => "full",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "tiny"
seed = 3

[plant]
benchmark = "scalar"

[sampling]
eps_x = 0.1
eps_w = 0.25
audit_trials = 2000

[train]
eps = 0.25
epochs = 20
batch_size = 64
learning_rate = 0.001
check_every = 10

[train.weights]
c0 = 1.0
c1 = 1.0
c2 = 1.0
c3 = 1.0
c4 = 1.0
cl1 = 0.0001
cl2 = 0.0001
cv = 10.0

[train.bundle]
k = [1e-5, 0.5, 1e-3, 0.01]
gamma = [2.0, 2.0, 2.0, 2.0]
k_h = 1.0

[train.lip_targets]
lyapunov = 1.0
controller = 20.0
barrier = 1.0

[train.arch]
v_form = "squared"
v_hidden = [6]
v_activation = "tanh"
g_hidden = [5]
g_activation = "tanh"
g_clamp = [-1.0, 1.0]

[simulate]
steps = 100
pairs = 5
rollouts = 5

[[simulate.scenarios]]
name = "pair"
x0 = [-1.0]
x0_hat = [1.0]
signal = { kind = "constant", value = 0.2 }
"#;

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let c = RunConfig::parse(SMALL).unwrap();
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert!(matches!(RunConfig::parse(&SMALL.replace("seed = 3", "seed = 3\ncolour = 1")), Err(Error::Config(_))));
        assert!(RunConfig::parse(&SMALL.replace("audit_trials = 2000", "audit_trials = 2000\nbogus = 2")).is_err());
        assert!(RunConfig::parse(&SMALL.replace("eps = 0.25\nepochs", "eps = 0.1\nepochs")).is_err());
    }

    #[test]
    fn pipeline_in_temp_dir() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg_path = tmp.path().join("c.toml");
        std::fs::write(&cfg_path, SMALL).unwrap();
        let out = tmp.path().join("run");
        let a = RunArgs {
            config: cfg_path,
            out: Some(out.clone()),
            seed: None,
        };
        assert_eq!(cmd_sample(&a).unwrap(), 0);
        assert_eq!(cmd_train(&a).unwrap(), 0);
        let code = cmd_verify(&a, false, None).unwrap();
        let c1 = std::fs::read_to_string(out.join("certificate.json")).unwrap();
        assert_eq!(cmd_verify(&a, false, None).unwrap(), code);
        assert_eq!(std::fs::read_to_string(out.join("certificate.json")).unwrap(), c1);
        assert_eq!(cmd_verify(&a, false, Some("audit:100")).unwrap(), 1);
        let audit: Certificate = serde_json::from_str(&std::fs::read_to_string(out.join("certificate.json")).unwrap()).unwrap();
        assert!(!audit.valid);
        assert_eq!(cmd_simulate(&a).unwrap(), 0);
        let r1 = cmd_report(&out).unwrap();
        assert_eq!(r1, cmd_report(&out).unwrap());
        assert!(r1.contains("margin"));
        assert!(!full_rows(&std::fs::read_to_string(out.join("train_log.csv")).unwrap()).is_empty());

        let empty = tempfile::tempdir().unwrap();
        assert_eq!(cmd_report(empty.path()).unwrap(), "nothing to report\n");

        // tampering breaks the chain
        let vpath = out.join("weights").join("v.json");
        let text = std::fs::read_to_string(&vpath).unwrap();
        let idx = text.find("\"weights\"").unwrap();
        let digit = text[idx..].find(|c: char| c.is_ascii_digit() && c != '0').unwrap() + idx;
        let mut bytes = text.into_bytes();
        bytes[digit] = if bytes[digit] == b'9' { b'8' } else { bytes[digit] + 1 };
        std::fs::write(&vpath, bytes).unwrap();
        assert!(matches!(cmd_verify(&a, false, None), Err(Error::Provenance(_))));

        std::fs::remove_file(out.join("data").join("x.csv")).unwrap();
        assert!(matches!(cmd_train(&a), Err(Error::Provenance(_))));
    }

    #[test]
    fn capacity_and_cap_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.toml");
        let big = SMALL.replace("benchmark = \"scalar\"", "benchmark = \"spacecraft\"").replace("eps_x = 0.1", "eps_x = 1e-9");
        std::fs::write(&p, big).unwrap();
        let a = RunArgs {
            config: p,
            out: Some(tmp.path().join("r")),
            seed: None,
        };
        let e = cmd_sample(&a).unwrap_err();
        assert!(matches!(e, Error::Capacity { .. }));
        assert_eq!(exit_code(&e), 1);
        assert_eq!(exit_code(&Error::EnumerationCap { required: 2, cap: 1 }), 4);
        assert_eq!(exit_code(&Error::TrainingFailed("x".into())), 2);
        assert_eq!(exit_code(&Error::Provenance("x".into())), 3);
    }
}
