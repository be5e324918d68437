//! Black-box discrete-time plants and the four shipped benchmarks.
//!
//! A plant is anything that can evaluate `x' = f(x, u)`. The trainer only ever
//! calls [`SystemSpec::step`] and [`SystemSpec::input_jacobian`]; whether the
//! Jacobian is analytic or obtained by central differences is recorded in
//! [`SystemSpec::jacobian_source`].

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_n, hi_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = AxisBox { lo, hi };
        b.validate()?;
        Ok(b)
    }

    /// Same interval in every dimension.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// Builds a box from `[lo, hi]` pairs, the layout used by run configs.
    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p[0]).collect(),
            pairs.iter().map(|p| p[1]).collect(),
        )
    }

    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| [l, h]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::invalid(format!(
                "box bounds have lengths {} and {}",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for (i, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::invalid(format!(
                    "box dimension {i}: need finite lo < hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (h - l))
            .collect()
    }

    /// Euclidean diameter, the largest distance between two points of the box.
    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| rng.gen_range(l..=h))
            .collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }
}

/// The state update `f(x, u)` of a plant.
pub trait Dynamics: Send + Sync {
    /// Writes `f(x, u)` into `out`. Slices have lengths `n`, `m` and `n`.
    fn step(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    /// Writes the row-major `n x m` input Jacobian into `out` and returns `true`,
    /// or returns `false` when no closed form is available.
    fn input_jacobian(&self, _x: &[f64], _u: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Which route [`SystemSpec::input_jacobian`] takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Closed form when the plant provides one, central differences otherwise.
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Scalar,
    Manipulator,
    Jet,
    Spacecraft,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Scalar,
        Benchmark::Manipulator,
        Benchmark::Jet,
        Benchmark::Spacecraft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Scalar => "scalar",
            Benchmark::Manipulator => "manipulator",
            Benchmark::Jet => "jet",
            Benchmark::Spacecraft => "spacecraft",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == name)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown benchmark '{name}' (expected scalar, manipulator, jet or spacecraft)"
                ))
            })
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `x' = x + tau (a sin x + tan u)`.
#[derive(Debug, Clone)]
pub struct ScalarPlant {
    pub a: f64,
    pub tau: f64,
}

impl Dynamics for ScalarPlant {
    fn step(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[0] + self.tau * (self.a * x[0].sin() + u[0].tan());
    }

    fn input_jacobian(&self, _x: &[f64], u: &[f64], out: &mut [f64]) -> bool {
        let c = u[0].cos();
        out[0] = self.tau / (c * c);
        true
    }
}

/// Single-link manipulator with viscous damping.
#[derive(Debug, Clone)]
pub struct ManipulatorPlant {
    pub mass: f64,
    pub damping: f64,
    pub tau: f64,
}

impl Dynamics for ManipulatorPlant {
    fn step(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[0] + self.tau * x[1];
        out[1] = x[1] + self.tau * ((u[0] - self.damping * x[1]) / self.mass);
    }

    fn input_jacobian(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> bool {
        out[0] = 0.0;
        out[1] = self.tau / self.mass;
        true
    }
}

/// Moore-Greitzer jet engine model in no-stall mode.
#[derive(Debug, Clone)]
pub struct JetPlant {
    pub tau: f64,
}

impl Dynamics for JetPlant {
    fn step(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let x1 = x[0];
        out[0] = x1 + self.tau * (-x[1] - 1.5 * x1 * x1 - 0.5 * x1 * x1 * x1);
        out[1] = x[1] + self.tau * u[0];
    }

    fn input_jacobian(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> bool {
        out[0] = 0.0;
        out[1] = self.tau;
        true
    }
}

/// Rigid body rotating about its principal axes, torque on every axis.
#[derive(Debug, Clone)]
pub struct SpacecraftPlant {
    pub inertia: [f64; 3],
    pub tau: f64,
}

impl Dynamics for SpacecraftPlant {
    fn step(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let [j1, j2, j3] = self.inertia;
        out[0] = x[0] + self.tau * ((j2 - j3) / j1 * x[1] * x[2] + u[0] / j1);
        out[1] = x[1] + self.tau * ((j3 - j1) / j2 * x[0] * x[2] + u[1] / j2);
        out[2] = x[2] + self.tau * ((j1 - j2) / j3 * x[0] * x[1] + u[2] / j3);
    }

    fn input_jacobian(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        out[0] = self.tau / self.inertia[0];
        out[4] = self.tau / self.inertia[1];
        out[8] = self.tau / self.inertia[2];
        true
    }
}

type StepFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Adapter for plants given as closures.
pub struct FnDynamics {
    step: Box<StepFn>,
    jac: Option<Box<JacFn>>,
}

impl FnDynamics {
    pub fn new(step: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        FnDynamics {
            step: Box::new(step),
            jac: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jac = Some(Box::new(jac));
        self
    }
}

impl Dynamics for FnDynamics {
    fn step(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.step)(x, u, out)
    }

    fn input_jacobian(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> bool {
        match &self.jac {
            Some(j) => {
                j(x, u, out);
                true
            }
            None => false,
        }
    }
}

/// A black-box plant together with its domains and Lipschitz metadata.
///
/// Immutable after construction; cloning shares the dynamics.
#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    pub state_dim: usize,
    pub internal_input_dim: usize,
    pub external_input_dim: usize,
    pub state_box: AxisBox,
    pub external_box: AxisBox,
    /// Saturation range for the controller output, if any.
    pub internal_box: Option<AxisBox>,
    pub tau: f64,
    pub lip_x: f64,
    pub lip_u: f64,
    pub jacobian_mode: JacobianMode,
    dynamics: Arc<dyn Dynamics>,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("internal_input_dim", &self.internal_input_dim)
            .field("external_input_dim", &self.external_input_dim)
            .field("state_box", &self.state_box)
            .field("external_box", &self.external_box)
            .field("internal_box", &self.internal_box)
            .field("tau", &self.tau)
            .field("lip_x", &self.lip_x)
            .field("lip_u", &self.lip_u)
            .finish()
    }
}

/// Where a Jacobian came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianSource {
    Analytic,
    FiniteDifference,
}

impl SystemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        internal_input_dim: usize,
        state_box: AxisBox,
        external_box: AxisBox,
        internal_box: Option<AxisBox>,
        tau: f64,
        lip_x: f64,
        lip_u: f64,
        dynamics: Arc<dyn Dynamics>,
    ) -> Result<Self> {
        state_box.validate()?;
        external_box.validate()?;
        if let Some(b) = &internal_box {
            b.validate()?;
            if b.dim() != internal_input_dim {
                return Err(Error::invalid(format!(
                    "internal box has dimension {}, plant has m = {internal_input_dim}",
                    b.dim()
                )));
            }
        }
        if internal_input_dim == 0 {
            return Err(Error::invalid("internal input dimension must be positive"));
        }
        for (what, v) in [("tau", tau), ("lip_x", lip_x), ("lip_u", lip_u)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{what} must be positive, got {v}")));
            }
        }
        Ok(SystemSpec {
            name: name.into(),
            state_dim: state_box.dim(),
            internal_input_dim,
            external_input_dim: external_box.dim(),
            state_box,
            external_box,
            internal_box,
            tau,
            lip_x,
            lip_u,
            jacobian_mode: JacobianMode::Analytic,
            dynamics,
        })
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Self {
        self.jacobian_mode = mode;
        self
    }

    pub fn with_internal_box(mut self, b: Option<AxisBox>) -> Result<Self> {
        if let Some(bx) = &b {
            bx.validate()?;
            if bx.dim() != self.internal_input_dim {
                return Err(Error::invalid("internal box dimension mismatch"));
            }
        }
        self.internal_box = b;
        Ok(self)
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    /// Evaluates `f(x, u)` with dimension and finiteness checks.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, u)?;
        let mut out = vec![0.0; self.state_dim];
        self.dynamics.step(x, u, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "plant '{}' produced a non-finite state at x={x:?}, u={u:?}",
                self.name
            )));
        }
        Ok(out)
    }

    /// Unchecked hot-path variant of [`step`](Self::step).
    #[inline]
    pub fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.state_dim);
        debug_assert_eq!(u.len(), self.internal_input_dim);
        self.dynamics.step(x, u, out);
    }

    /// Row-major `n x m` Jacobian of `f` with respect to `u`.
    pub fn input_jacobian(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, u)?;
        let mut out = vec![0.0; self.state_dim * self.internal_input_dim];
        self.input_jacobian_into(x, u, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite input Jacobian for plant '{}' at x={x:?}, u={u:?}",
                self.name
            )));
        }
        Ok(out)
    }

    pub fn input_jacobian_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> JacobianSource {
        if self.jacobian_mode == JacobianMode::Analytic && self.dynamics.input_jacobian(x, u, out)
        {
            return JacobianSource::Analytic;
        }
        self.finite_difference_jacobian(x, u, out);
        JacobianSource::FiniteDifference
    }

    /// Central differences with step `1e-5 * max(1, |u|_inf)`.
    pub fn finite_difference_jacobian(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.state_dim;
        let m = self.internal_input_dim;
        let scale = u.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let h = 1e-5 * scale;
        let mut up = u.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..m {
            up[j] = u[j] + h;
            self.dynamics.step(x, &up, &mut fp);
            up[j] = u[j] - h;
            self.dynamics.step(x, &up, &mut fm);
            up[j] = u[j];
            for i in 0..n {
                out[i * m + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    }

    /// Which route [`input_jacobian`](Self::input_jacobian) takes for this plant.
    pub fn jacobian_source(&self) -> JacobianSource {
        let mut scratch = vec![0.0; self.state_dim * self.internal_input_dim];
        let x = self.state_box.center();
        let u = vec![0.0; self.internal_input_dim];
        if self.jacobian_mode == JacobianMode::Analytic
            && self.dynamics.input_jacobian(&x, &u, &mut scratch)
        {
            JacobianSource::Analytic
        } else {
            JacobianSource::FiniteDifference
        }
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.state_dim || u.len() != self.internal_input_dim {
            return Err(Error::invalid(format!(
                "plant '{}' expects x in R^{} and u in R^{}, got lengths {} and {}",
                self.name,
                self.state_dim,
                self.internal_input_dim,
                x.len(),
                u.len()
            )));
        }
        if x.iter().chain(u).any(|v| !v.is_finite()) {
            return Err(Error::invalid("plant inputs must be finite"));
        }
        Ok(())
    }
}

/// Builds one of the four benchmark plants with its published parameters.
pub fn make_benchmark(which: Benchmark) -> SystemSpec {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
    let tau = 0.01;
    let built = match which {
        Benchmark::Scalar => SystemSpec::new(
            "scalar",
            1,
            AxisBox::cube(1, -FRAC_PI_2, FRAC_PI_2).unwrap(),
            AxisBox::cube(1, -1.0, 1.0).unwrap(),
            None,
            tau,
            1.0,
            0.01,
            Arc::new(ScalarPlant { a: 0.1, tau }),
        ),
        Benchmark::Manipulator => SystemSpec::new(
            "manipulator",
            1,
            AxisBox::cube(2, -FRAC_PI_4, FRAC_PI_4).unwrap(),
            AxisBox::cube(1, -0.5, 0.5).unwrap(),
            None,
            tau,
            1.01,
            0.01,
            Arc::new(ManipulatorPlant {
                mass: 1.0,
                damping: 0.1,
                tau,
            }),
        ),
        Benchmark::Jet => SystemSpec::new(
            "jet",
            1,
            AxisBox::cube(2, -0.25, 0.25).unwrap(),
            AxisBox::cube(1, -0.5, 0.5).unwrap(),
            None,
            tau,
            0.93,
            0.01,
            Arc::new(JetPlant { tau }),
        ),
        Benchmark::Spacecraft => SystemSpec::new(
            "spacecraft",
            3,
            AxisBox::cube(3, -0.25, 0.25).unwrap(),
            AxisBox::cube(1, -1.0, 1.0).unwrap(),
            None,
            tau,
            1.0,
            0.01,
            Arc::new(SpacecraftPlant {
                inertia: [200.0, 200.0, 100.0],
                tau,
            }),
        ),
    };
    built.expect("benchmark parameters are valid")
}

/// Looks a benchmark up by name.
pub fn make_benchmark_named(name: &str) -> Result<SystemSpec> {
    Benchmark::parse(name).map(make_benchmark)
}
