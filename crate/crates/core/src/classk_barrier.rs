//! Power-law comparison functions `k s^gamma` and the box barrier `h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::AxisBox;

/// Which comparison function of the bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassK {
    A1,
    A2,
    A3,
    Sigma,
}

impl ClassK {
    fn index(self) -> usize {
        match self {
            ClassK::A1 => 0,
            ClassK::A2 => 1,
            ClassK::A3 => 2,
            ClassK::Sigma => 3,
        }
    }
}

/// Gains `k = [k1, k2, k3, kw]`, degrees `gamma = [g1, g2, g3, gw]` and barrier scale `kh`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassKBundle {
    pub k: [f64; 4],
    pub gamma: [f64; 4],
    pub k_h: f64,
}

impl ClassKBundle {
    pub fn new(k: [f64; 4], gamma: [f64; 4], k_h: f64) -> Result<Self> {
        let b = ClassKBundle { k, gamma, k_h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::invalid(format!("class-K gains must be positive, got {:?}", self.k)));
        }
        if self.k[0] >= self.k[1] {
            return Err(Error::invalid(format!(
                "need k1 < k2 for the sandwich bounds, got k1={} k2={}",
                self.k[0], self.k[1]
            )));
        }
        if self.gamma.iter().any(|&g| !(g.is_finite() && g >= 1.0)) {
            return Err(Error::invalid(format!("degrees must be >= 1, got {:?}", self.gamma)));
        }
        if !(self.k_h.is_finite() && self.k_h > 0.0) {
            return Err(Error::invalid(format!("k_h must be positive, got {}", self.k_h)));
        }
        Ok(())
    }

    pub fn gain(&self, which: ClassK) -> f64 {
        self.k[which.index()]
    }

    pub fn degree(&self, which: ClassK) -> f64 {
        self.gamma[which.index()]
    }

    /// `k s^gamma` without the sign check, for hot loops.
    #[inline]
    pub fn eval_unchecked(&self, which: ClassK, s: f64) -> f64 {
        let i = which.index();
        let g = self.gamma[i];
        if g == 2.0 {
            self.k[i] * (s * s)
        } else {
            self.k[i] * s.powf(g)
        }
    }
}

/// Evaluates `k s^gamma` for the selected function.
pub fn classk_eval(bundle: &ClassKBundle, which: ClassK, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::invalid(format!("class-K argument must be non-negative, got {s}")));
    }
    Ok(bundle.eval_unchecked(which, s))
}

/// Lipschitz constant `k gamma D^(gamma - 1)` of `k s^gamma` on `[0, D]`.
pub fn classk_lipschitz(bundle: &ClassKBundle, which: ClassK, diameter: f64) -> f64 {
    let (k, g) = (bundle.gain(which), bundle.degree(which));
    k * g * diameter.powf(g - 1.0)
}

/// `h(x) = max_i (|x_i - c_i| - r_i)` for a box with center `c` and half-widths `r`.
/// Zero on the boundary, negative inside, 1-Lipschitz in the Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierFn {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
}

impl BarrierFn {
    pub fn new(b: &AxisBox) -> Self {
        BarrierFn {
            center: b.center(),
            half_widths: b.half_widths(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        1.0
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 0..x.len() {
            let v = (x[i] - self.center[i]).abs() - self.half_widths[i];
            if v > best {
                best = v;
            }
        }
        best
    }

    /// Value and a subgradient (the first maximizing coordinate carries the sign).
    pub fn eval_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for i in 0..x.len() {
            let v = (x[i] - self.center[i]).abs() - self.half_widths[i];
            if v > best {
                best = v;
                arg = i;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let d = x[arg] - self.center[arg];
        grad[arg] = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        best
    }
}

/// Convenience wrapper matching [`BarrierFn::eval`].
pub fn barrier_eval(bf: &BarrierFn, x: &[f64]) -> f64 {
    bf.eval(x)
}
