//! Fully connected networks for the Lyapunov candidate and the controller.
//!
//! Parameters live in one flat vector (per layer: row-major weights, then
//! biases), so gradients, optimizer state and finite-difference checks all
//! share a single layout.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::{sha256_hex, substream_rng};
use crate::systems::AxisBox;

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative at `z`; relu uses 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
        }
    }

    /// Slope bounds `(alpha, beta)`.
    pub fn slope_bounds(self) -> (f64, f64) {
        match self {
            Activation::Relu | Activation::Tanh => (0.0, 1.0),
            Activation::Sigmoid => (0.0, 0.25),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(Error::invalid(format!("unknown activation '{s}'"))),
        }
    }
}

/// Multi-layer perceptron `t -> W_L phi(... phi(W_0 t + b_0) ...) + b_L`,
/// optionally followed by a per-coordinate hard saturation of the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activation: Activation,
    clamp: Option<AxisBox>,
    params: Vec<f64>,
    w_off: Vec<usize>,
    b_off: Vec<usize>,
}

/// Activations recorded by [`Mlp::forward_tape`] for reverse mode.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// `acts[0]` is the input, `acts[l]` the output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer, the last one before clamping.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Reusable buffers for allocation-free forward passes.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Mlp {
    /// Network with all parameters zero.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::invalid(format!(
                "layer sizes must have length >= 2 and positive entries, got {layer_sizes:?}"
            )));
        }
        let mut w_off = Vec::new();
        let mut b_off = Vec::new();
        let mut total = 0;
        for l in 0..layer_sizes.len() - 1 {
            w_off.push(total);
            total += layer_sizes[l] * layer_sizes[l + 1];
            b_off.push(total);
            total += layer_sizes[l + 1];
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            clamp: None,
            params: vec![0.0; total],
            w_off,
            b_off,
        })
    }

    /// Builds a network from nested row-major weights and biases.
    pub fn from_layers(
        layer_sizes: &[usize],
        activation: Activation,
        weights: &[Vec<Vec<f64>>],
        biases: &[Vec<f64>],
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        let layers = net.num_layers();
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::invalid(format!(
                "expected {layers} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..layers {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            if weights[l].len() != fan_out || weights[l].iter().any(|r| r.len() != fan_in) {
                return Err(Error::invalid(format!(
                    "layer {l}: weight matrix must be {fan_out}x{fan_in}"
                )));
            }
            if biases[l].len() != fan_out {
                return Err(Error::invalid(format!("layer {l}: bias must have length {fan_out}")));
            }
            let w: Vec<f64> = weights[l].iter().flatten().copied().collect();
            net.weight_mut(l).copy_from_slice(&w);
            net.bias_mut(l).copy_from_slice(&biases[l]);
        }
        if net.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("network parameters must be finite"));
        }
        Ok(net)
    }

    /// Adds a hard output saturation.
    pub fn with_clamp(mut self, clamp: Option<AxisBox>) -> Result<Self> {
        if let Some(c) = &clamp {
            c.validate()?;
            if c.dim() != self.output_dim() {
                return Err(Error::invalid(format!(
                    "clamp has dimension {}, network output has {}",
                    c.dim(),
                    self.output_dim()
                )));
            }
        }
        self.clamp = clamp;
        Ok(self)
    }

    /// Uniform initialization in `[-s, s]` with `s = scale / sqrt(fan_in)`.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for l in 0..self.num_layers() {
            let s = scale / (self.layer_sizes[l] as f64).sqrt();
            for v in self.weight_mut(l) {
                *v = rng.gen_range(-s..=s);
            }
            for v in self.bias_mut(l) {
                *v = rng.gen_range(-s..=s);
            }
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn clamp(&self) -> Option<&AxisBox> {
        self.clamp.as_ref()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of layer `l`'s weight block inside the flat parameter vector.
    pub fn weight_offset(&self, l: usize) -> usize {
        self.w_off[l]
    }

    pub fn bias_offset(&self, l: usize) -> usize {
        self.b_off[l]
    }

    /// Row-major `fan_out x fan_in` weights of layer `l`.
    pub fn weight(&self, l: usize) -> &[f64] {
        &self.params[self.w_off[l]..self.b_off[l]]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let (a, b) = (self.w_off[l], self.b_off[l]);
        &mut self.params[a..b]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let a = self.b_off[l];
        &self.params[a..a + self.layer_sizes[l + 1]]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let a = self.b_off[l];
        let n = self.layer_sizes[l + 1];
        &mut self.params[a..a + n]
    }

    /// Multiplies every weight and bias by `t`.
    pub fn scaled(&self, t: f64) -> Mlp {
        let mut out = self.clone();
        out.params.iter_mut().for_each(|v| *v *= t);
        out
    }

    /// Affine map of layer `l` applied to `input`, accumulated from zero in
    /// column order and then offset by the bias.
    #[inline]
    pub fn affine(&self, l: usize, input: &[f64], out: &mut Vec<f64>) {
        let fan_in = self.layer_sizes[l];
        let fan_out = self.layer_sizes[l + 1];
        let w = self.weight(l);
        let b = self.bias(l);
        out.clear();
        for k in 0..fan_out {
            let row = &w[k * fan_in..(k + 1) * fan_in];
            let mut acc = 0.0;
            for j in 0..fan_in {
                acc += row[j] * input[j];
            }
            out.push(acc + b[k]);
        }
    }

    #[inline]
    fn saturate(&self, out: &mut [f64]) {
        if let Some(c) = &self.clamp {
            for (v, (lo, hi)) in out.iter_mut().zip(c.lo.iter().zip(&c.hi)) {
                if *v > *hi {
                    *v = *hi;
                } else if *v < *lo {
                    *v = *lo;
                }
            }
        }
    }

    /// Evaluates the network with dimension and finiteness checks.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects input of length {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(input, &mut Scratch::default(), &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("network produced a non-finite output"));
        }
        Ok(out)
    }

    /// Unchecked forward pass writing into `out`.
    pub fn forward_into(&self, input: &[f64], s: &mut Scratch, out: &mut [f64]) {
        s.a.clear();
        s.a.extend_from_slice(input);
        self.forward_from(0, s, out);
    }

    /// Continues a forward pass whose layer-`l` input sits in the scratch.
    /// Used by the verifier after it has assembled the first hidden layer itself.
    pub fn forward_from(&self, first: usize, s: &mut Scratch, out: &mut [f64]) {
        let last = self.num_layers() - 1;
        for l in first..=last {
            self.affine(l, &s.a, &mut s.b);
            if l < last {
                let act = self.activation;
                s.b.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            std::mem::swap(&mut s.a, &mut s.b);
        }
        out.copy_from_slice(&s.a);
        self.saturate(out);
    }

    /// Places a hidden-layer activation vector into the scratch for [`forward_from`](Self::forward_from).
    pub fn load_scratch(s: &mut Scratch, acts: &[f64]) {
        s.a.clear();
        s.a.extend_from_slice(acts);
    }

    /// Forward pass that records everything needed by [`backward`](Self::backward).
    pub fn forward_tape(&self, input: &[f64]) -> Tape {
        let mut tape = Tape::default();
        self.forward_tape_into(input, &mut tape);
        tape
    }

    pub fn forward_tape_into(&self, input: &[f64], tape: &mut Tape) {
        let layers = self.num_layers();
        tape.acts.resize(layers, Vec::new());
        tape.pre.resize(layers, Vec::new());
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(input);
        for l in 0..layers {
            let mut z = std::mem::take(&mut tape.pre[l]);
            self.affine(l, &tape.acts[l], &mut z);
            if l + 1 < layers {
                let a = &mut tape.acts[l + 1];
                a.clear();
                a.extend(z.iter().map(|&v| self.activation.apply(v)));
            } else {
                tape.output.clear();
                tape.output.extend_from_slice(&z);
                let mut o = std::mem::take(&mut tape.output);
                self.saturate(&mut o);
                tape.output = o;
            }
            tape.pre[l] = z;
        }
    }

    /// Reverse pass: accumulates `d loss / d params` into `grad_params` and,
    /// if requested, writes `d loss / d input` into `grad_input`.
    /// Saturated output coordinates pass no gradient.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        let layers = self.num_layers();
        let mut delta: Vec<f64> = grad_out.to_vec();
        if let Some(c) = &self.clamp {
            for (i, d) in delta.iter_mut().enumerate() {
                let z = tape.pre[layers - 1][i];
                if z > c.hi[i] || z < c.lo[i] {
                    *d = 0.0;
                }
            }
        }
        let mut grad_input = grad_input;
        for l in (0..layers).rev() {
            let fan_in = self.layer_sizes[l];
            let fan_out = self.layer_sizes[l + 1];
            let a = &tape.acts[l];
            let (wo, bo) = (self.w_off[l], self.b_off[l]);
            for k in 0..fan_out {
                let dk = delta[k];
                if dk == 0.0 {
                    continue;
                }
                let row = &mut grad_params[wo + k * fan_in..wo + (k + 1) * fan_in];
                for j in 0..fan_in {
                    row[j] += dk * a[j];
                }
                grad_params[bo + k] += dk;
            }
            if l == 0 && grad_input.is_none() {
                break;
            }
            let w = self.weight(l);
            let mut prev = vec![0.0; fan_in];
            for k in 0..fan_out {
                let dk = delta[k];
                if dk == 0.0 {
                    continue;
                }
                let row = &w[k * fan_in..(k + 1) * fan_in];
                for j in 0..fan_in {
                    prev[j] += row[j] * dk;
                }
            }
            if l == 0 {
                if let Some(gi) = grad_input.take() {
                    gi.copy_from_slice(&prev);
                }
                break;
            }
            let z = &tape.pre[l - 1];
            for j in 0..fan_in {
                prev[j] *= self.activation.derivative(z[j]);
            }
            delta = prev;
        }
    }

    pub fn weights_doc(&self, lyapunov_form: Option<VForm>) -> WeightsDoc {
        let layers = self.num_layers();
        let mut doc = WeightsDoc {
            format_version: WEIGHTS_FORMAT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            clamp: self.clamp.as_ref().map(AxisBox::to_pairs),
            lyapunov_form,
            weights: (0..layers)
                .map(|l| {
                    self.weight(l)
                        .chunks(self.layer_sizes[l])
                        .map(<[f64]>::to_vec)
                        .collect()
                })
                .collect(),
            biases: (0..layers).map(|l| self.bias(l).to_vec()).collect(),
            content_hash: String::new(),
        };
        doc.content_hash = doc.compute_hash();
        doc
    }

    /// SHA-256 over the canonical weights document.
    pub fn content_hash(&self) -> String {
        self.weights_doc(None).content_hash
    }

    pub fn from_doc(doc: &WeightsDoc) -> Result<Self> {
        if doc.format_version != WEIGHTS_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported weights format version {}",
                doc.format_version
            )));
        }
        let expected = doc.compute_hash();
        if expected != doc.content_hash {
            return Err(Error::Provenance(format!(
                "weights document hashes to {expected}, records {}",
                doc.content_hash
            )));
        }
        let clamp = doc.clamp.as_deref().map(AxisBox::from_pairs).transpose()?;
        Self::from_layers(&doc.layer_sizes, doc.activation, &doc.weights, &doc.biases)?.with_clamp(clamp)
    }
}

/// On-disk form of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDoc {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub clamp: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov_form: Option<VForm>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub content_hash: String,
}

impl WeightsDoc {
    fn compute_hash(&self) -> String {
        let mut bare = self.clone();
        bare.content_hash.clear();
        sha256_hex(serde_json::to_string(&bare).expect("weights serialize").as_bytes())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("weights serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Provenance(format!("cannot read weights {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Shape of the Lyapunov candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VForm {
    /// A plain network on the stacked pair `[x; xhat]`.
    #[default]
    Raw,
    /// `|N(x) - N(xhat)|^2`, symmetric with an exact zero diagonal.
    Squared,
}

/// The Lyapunov candidate `V(x, xhat)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovNet {
    pub form: VForm,
    pub net: Mlp,
}

/// Buffers reused by [`LyapunovNet::eval_backward`].
#[derive(Debug, Clone, Default)]
pub struct VWork {
    joint: Vec<f64>,
    t1: Tape,
    t2: Tape,
    g_in: Vec<f64>,
    s: Scratch,
    o1: Vec<f64>,
    o2: Vec<f64>,
}

impl LyapunovNet {
    pub fn raw(n: usize, hidden: &[usize], act: Activation) -> Result<Self> {
        let mut sizes = vec![2 * n];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(LyapunovNet {
            form: VForm::Raw,
            net: Mlp::zeros(&sizes, act)?,
        })
    }

    /// Squared form with an embedding of dimension `embed`.
    pub fn squared(n: usize, hidden: &[usize], embed: usize, act: Activation) -> Result<Self> {
        let mut sizes = vec![n];
        sizes.extend_from_slice(hidden);
        sizes.push(embed);
        Ok(LyapunovNet {
            form: VForm::Squared,
            net: Mlp::zeros(&sizes, act)?,
        })
    }

    pub fn from_mlp(form: VForm, net: Mlp, state_dim: usize) -> Result<Self> {
        let ok = match form {
            VForm::Raw => net.input_dim() == 2 * state_dim && net.output_dim() == 1,
            VForm::Squared => net.input_dim() == state_dim,
        };
        if !ok || net.clamp().is_some() {
            return Err(Error::invalid(format!(
                "network with sizes {:?} does not fit a {form:?} Lyapunov candidate on R^{state_dim}",
                net.layer_sizes()
            )));
        }
        Ok(LyapunovNet { form, net })
    }

    pub fn state_dim(&self) -> usize {
        match self.form {
            VForm::Raw => self.net.input_dim() / 2,
            VForm::Squared => self.net.input_dim(),
        }
    }

    /// Checked evaluation.
    pub fn eval(&self, x: &[f64], xhat: &[f64]) -> Result<f64> {
        let n = self.state_dim();
        if x.len() != n || xhat.len() != n {
            return Err(Error::invalid(format!(
                "V expects two states of length {n}, got {} and {}",
                x.len(),
                xhat.len()
            )));
        }
        let v = self.eval_fast(x, xhat, &mut VWork::default());
        if !v.is_finite() {
            return Err(Error::numeric("V produced a non-finite value"));
        }
        Ok(v)
    }

    /// Unchecked evaluation.
    pub fn eval_fast(&self, x: &[f64], xhat: &[f64], w: &mut VWork) -> f64 {
        match self.form {
            VForm::Raw => {
                w.joint.clear();
                w.joint.extend_from_slice(x);
                w.joint.extend_from_slice(xhat);
                w.o1.resize(1, 0.0);
                let joint = std::mem::take(&mut w.joint);
                self.net.forward_into(&joint, &mut w.s, &mut w.o1);
                w.joint = joint;
                w.o1[0]
            }
            VForm::Squared => {
                let d = self.net.output_dim();
                w.o1.resize(d, 0.0);
                w.o2.resize(d, 0.0);
                self.net.forward_into(x, &mut w.s, &mut w.o1);
                self.net.forward_into(xhat, &mut w.s, &mut w.o2);
                squared_gap(&w.o1, &w.o2)
            }
        }
    }

    /// Evaluates `V` and accumulates `seed * dV` into the parameter and state gradients.
    pub fn eval_backward(
        &self,
        x: &[f64],
        xhat: &[f64],
        seed: f64,
        grad_params: &mut [f64],
        grad_x: Option<&mut [f64]>,
        grad_xhat: Option<&mut [f64]>,
        w: &mut VWork,
    ) -> f64 {
        let n = self.state_dim();
        let want_in = grad_x.is_some() || grad_xhat.is_some();
        match self.form {
            VForm::Raw => {
                w.joint.clear();
                w.joint.extend_from_slice(x);
                w.joint.extend_from_slice(xhat);
                self.net.forward_tape_into(&w.joint, &mut w.t1);
                let v = w.t1.output[0];
                w.g_in.resize(2 * n, 0.0);
                let gi = if want_in { Some(&mut w.g_in[..]) } else { None };
                self.net.backward(&w.t1, &[seed], grad_params, gi);
                if let Some(gx) = grad_x {
                    gx.iter_mut().zip(&w.g_in[..n]).for_each(|(a, b)| *a += b);
                }
                if let Some(gh) = grad_xhat {
                    gh.iter_mut().zip(&w.g_in[n..]).for_each(|(a, b)| *a += b);
                }
                v
            }
            VForm::Squared => {
                self.net.forward_tape_into(x, &mut w.t1);
                self.net.forward_tape_into(xhat, &mut w.t2);
                let v = squared_gap(&w.t1.output, &w.t2.output);
                let g1: Vec<f64> = w
                    .t1
                    .output
                    .iter()
                    .zip(&w.t2.output)
                    .map(|(a, b)| 2.0 * seed * (a - b))
                    .collect();
                let g2: Vec<f64> = g1.iter().map(|v| -v).collect();
                w.g_in.resize(n, 0.0);
                let gi = if grad_x.is_some() { Some(&mut w.g_in[..]) } else { None };
                self.net.backward(&w.t1, &g1, grad_params, gi);
                if let Some(gx) = grad_x {
                    gx.iter_mut().zip(&w.g_in).for_each(|(a, b)| *a += b);
                }
                let gi = if grad_xhat.is_some() { Some(&mut w.g_in[..]) } else { None };
                self.net.backward(&w.t2, &g2, grad_params, gi);
                if let Some(gh) = grad_xhat {
                    gh.iter_mut().zip(&w.g_in).for_each(|(a, b)| *a += b);
                }
                v
            }
        }
    }

    /// Bound the underlying network must satisfy so that `V` is
    /// `lip_v`-Lipschitz in the stacked pair over a set of diameter `diam`.
    pub fn network_bound(&self, lip_v: f64, diam: f64) -> f64 {
        match self.form {
            VForm::Raw => lip_v,
            // |grad V| <= 2 sqrt(2) L_N |N(x) - N(xhat)| <= 2 sqrt(2) L_N^2 diam
            VForm::Squared => (lip_v / (2.0 * std::f64::consts::SQRT_2 * diam)).sqrt(),
        }
    }

    pub fn weights_doc(&self) -> WeightsDoc {
        self.net.weights_doc(Some(self.form))
    }

    pub fn content_hash(&self) -> String {
        self.weights_doc().content_hash
    }

    pub fn from_doc(doc: &WeightsDoc, state_dim: usize) -> Result<Self> {
        let form = doc
            .lyapunov_form
            .ok_or_else(|| Error::invalid("weights document does not describe a Lyapunov candidate"))?;
        Self::from_mlp(form, Mlp::from_doc(doc)?, state_dim)
    }
}

#[inline]
pub(crate) fn squared_gap(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (p, q) in a.iter().zip(b) {
        let d = p - q;
        acc += d * d;
    }
    acc
}

/// Largest sampled difference quotient `|net(a) - net(b)| / |a - b|` over `domain`.
///
/// Half of the pairs are drawn independently, half as small perturbations of a
/// random point, so both global and local slopes are probed. The result is a
/// lower bound on the true Lipschitz constant.
pub fn empirical_lipschitz(net: &Mlp, domain: &AxisBox, pairs: usize, seed: u64) -> f64 {
    let mut rng = substream_rng(seed, "lipschitz");
    let mut s = Scratch::default();
    let d = net.output_dim();
    let (mut oa, mut ob) = (vec![0.0; d], vec![0.0; d]);
    let radius = 1e-3 * domain.diameter();
    let mut best = 0.0_f64;
    for i in 0..pairs.max(1) {
        let a = domain.sample(&mut rng);
        let b = if i % 2 == 0 {
            domain.sample(&mut rng)
        } else {
            let mut b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-radius..=radius)).collect();
            domain.clamp(&mut b);
            b
        };
        let den = squared_gap(&a, &b).sqrt();
        if den == 0.0 {
            continue;
        }
        net.forward_into(&a, &mut s, &mut oa);
        net.forward_into(&b, &mut s, &mut ob);
        best = best.max(squared_gap(&oa, &ob).sqrt() / den);
    }
    best
}
