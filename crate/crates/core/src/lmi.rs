//! Lipschitz certificate of a feed-forward network as a linear matrix inequality.
//!
//! For weights `theta_0 .. theta_p`, slope bounds `(alpha, beta)` and diagonal
//! multipliers `Lambda_1 .. Lambda_p` (one per hidden layer), the matrix over the
//! blocks `[x, v_1, .., v_p, y]` is
//!
//! ```text
//! (x, x)       += L^2 I
//! (l, l)       += 2 alpha beta theta_l' Lambda_{l+1} theta_l
//! (l, l+1)     += -(alpha + beta) theta_l' Lambda_{l+1}
//! (l+1, l+1)   += 2 Lambda_{l+1}
//! (p, y)        = -theta_p'
//! (y, y)        = I
//! ```
//!
//! Positive definiteness implies the network is `L`-Lipschitz in the Euclidean norm.
//! Biases never enter. With a hard output clamp the bound still holds since
//! saturation is 1-Lipschitz.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::Mlp;

/// A network, its multipliers and the bound being certified.
#[derive(Debug, Clone, Copy)]
pub struct LmiContext<'a> {
    pub net: &'a Mlp,
    /// Diagonal of all `Lambda_l`, concatenated over hidden layers.
    pub lambda: &'a [f64],
    pub bound: f64,
}

impl<'a> LmiContext<'a> {
    pub fn new(net: &'a Mlp, lambda: &'a [f64], bound: f64) -> Result<Self> {
        let hidden: usize = net.hidden_sizes().iter().sum();
        if net.hidden_sizes().is_empty() {
            return Err(Error::invalid("the Lipschitz LMI needs at least one hidden layer"));
        }
        if lambda.len() != hidden {
            return Err(Error::invalid(format!(
                "multiplier block has {} entries, hidden layers have {hidden} neurons",
                lambda.len()
            )));
        }
        if lambda.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("multipliers must be non-negative"));
        }
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::invalid(format!("Lipschitz bound must be positive, got {bound}")));
        }
        Ok(LmiContext { net, lambda, bound })
    }
}

/// Side length of the LMI for a network with these layer sizes.
pub fn lmi_dim(layer_sizes: &[usize]) -> usize {
    layer_sizes.iter().sum()
}

fn block_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in sizes {
        off.push(acc);
        acc += s;
    }
    off
}

/// Assembles the symmetric LMI matrix.
pub fn build_lmi(ctx: &LmiContext<'_>) -> DMatrix<f64> {
    let net = ctx.net;
    let sizes = net.layer_sizes();
    let p = net.num_layers() - 1;
    let (alpha, beta) = net.activation().slope_bounds();
    let dim = lmi_dim(sizes);
    let off = block_offsets(sizes);
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    let l2 = ctx.bound * ctx.bound;
    for i in 0..sizes[0] {
        m[(i, i)] = l2;
    }
    let mut lam_off = 0;
    for l in 0..p {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let th = net.weight(l);
        let lam = &ctx.lambda[lam_off..lam_off + fan_out];
        let (oi, oo) = (off[l], off[l + 1]);
        if alpha * beta != 0.0 {
            for a in 0..fan_in {
                for b in 0..fan_in {
                    let mut s = 0.0;
                    for k in 0..fan_out {
                        s += th[k * fan_in + a] * lam[k] * th[k * fan_in + b];
                    }
                    m[(oi + a, oi + b)] += 2.0 * alpha * beta * s;
                }
            }
        }
        for k in 0..fan_out {
            for j in 0..fan_in {
                let v = -(alpha + beta) * th[k * fan_in + j] * lam[k];
                m[(oi + j, oo + k)] += v;
                m[(oo + k, oi + j)] += v;
            }
            m[(oo + k, oo + k)] += 2.0 * lam[k];
        }
        lam_off += fan_out;
    }
    let (fan_in, fan_out) = (sizes[p], sizes[p + 1]);
    let th = net.weight(p);
    let (oi, oy) = (off[p], off[p + 1]);
    for o in 0..fan_out {
        for k in 0..fan_in {
            m[(oi + k, oy + o)] = -th[o * fan_in + k];
            m[(oy + o, oi + k)] = -th[o * fan_in + k];
        }
        m[(oy + o, oy + o)] = 1.0;
    }
    m
}

/// Outcome of a Cholesky attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdReport {
    pub is_pd: bool,
    /// `log det M`, only meaningful when `is_pd`.
    pub logdet: Option<f64>,
    /// Smallest diagonal entry of the Cholesky factor, when it exists.
    pub min_pivot: Option<f64>,
}

/// Cholesky-based positive-definiteness test with log-determinant.
pub fn pd_logdet(m: &DMatrix<f64>) -> Result<PdReport> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("LMI matrix has non-finite entries"));
    }
    match m.clone().cholesky() {
        Some(ch) => {
            let l = ch.l_dirty();
            let mut logdet = 0.0;
            let mut min_pivot = f64::INFINITY;
            for i in 0..m.nrows() {
                let d = l[(i, i)];
                if !(d > 0.0) {
                    return Ok(PdReport {
                        is_pd: false,
                        logdet: None,
                        min_pivot: None,
                    });
                }
                logdet += d.ln();
                min_pivot = min_pivot.min(d);
            }
            Ok(PdReport {
                is_pd: true,
                logdet: Some(2.0 * logdet),
                min_pivot: Some(min_pivot),
            })
        }
        None => Ok(PdReport {
            is_pd: false,
            logdet: None,
            min_pivot: None,
        }),
    }
}

pub fn is_pd(ctx: &LmiContext<'_>) -> Result<bool> {
    Ok(pd_logdet(&build_lmi(ctx))?.is_pd)
}

/// `log det M` and its gradient with respect to the network parameters
/// (flat layout of [`Mlp::params`]) and the multipliers.
#[derive(Debug, Clone)]
pub struct LogdetGrad {
    pub logdet: f64,
    pub d_params: Vec<f64>,
    pub d_lambda: Vec<f64>,
}

/// Gradient of `log det M` via `d log det M = tr(M^{-1} dM)`.
pub fn logdet_grad(ctx: &LmiContext<'_>) -> Result<LogdetGrad> {
    let m = build_lmi(ctx);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("LMI matrix has non-finite entries"));
    }
    let ch = m.clone().cholesky().ok_or_else(|| {
        Error::InfeasibleBarrier("LMI is not positive definite; reduce the step size".into())
    })?;
    let l = ch.l_dirty();
    let mut logdet = 0.0;
    for i in 0..m.nrows() {
        logdet += l[(i, i)].ln();
    }
    let logdet = 2.0 * logdet;
    let g = ch.inverse();

    let net = ctx.net;
    let sizes = net.layer_sizes();
    let p = net.num_layers() - 1;
    let (alpha, beta) = net.activation().slope_bounds();
    let off = block_offsets(sizes);
    let mut d_params = vec![0.0; net.num_params()];
    let mut d_lambda = vec![0.0; ctx.lambda.len()];
    let mut lam_off = 0;
    for l in 0..p {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let th = net.weight(l);
        let wo = net.weight_offset(l);
        let lam = &ctx.lambda[lam_off..lam_off + fan_out];
        let (oi, oo) = (off[l], off[l + 1]);
        if alpha * beta != 0.0 {
            // d/d theta of tr(G_ll 2ab theta' Lam theta) = 4ab Lam theta G_ll
            for k in 0..fan_out {
                let mut quad = 0.0;
                for j in 0..fan_in {
                    let mut s = 0.0;
                    for b in 0..fan_in {
                        s += th[k * fan_in + b] * g[(oi + b, oi + j)];
                    }
                    d_params[wo + k * fan_in + j] += 4.0 * alpha * beta * lam[k] * s;
                    quad += s * th[k * fan_in + j];
                }
                d_lambda[lam_off + k] += 2.0 * alpha * beta * quad;
            }
        }
        for k in 0..fan_out {
            let mut dl = 0.0;
            for j in 0..fan_in {
                let gjk = g[(oi + j, oo + k)];
                d_params[wo + k * fan_in + j] += -2.0 * (alpha + beta) * gjk * lam[k];
                dl += gjk * th[k * fan_in + j];
            }
            d_lambda[lam_off + k] += -2.0 * (alpha + beta) * dl + 2.0 * g[(oo + k, oo + k)];
        }
        lam_off += fan_out;
    }
    let (fan_in, fan_out) = (sizes[p], sizes[p + 1]);
    let wo = net.weight_offset(p);
    let (oi, oy) = (off[p], off[p + 1]);
    for o in 0..fan_out {
        for k in 0..fan_in {
            d_params[wo + o * fan_in + k] += -2.0 * g[(oi + k, oy + o)];
        }
    }
    Ok(LogdetGrad {
        logdet,
        d_params,
        d_lambda,
    })
}

/// `L_M = -c_l1 logdet M_v - c_l2 logdet M_g` and its gradients.
#[derive(Debug, Clone)]
pub struct LmiLoss {
    pub value: f64,
    pub logdet_v: f64,
    pub logdet_g: f64,
    pub d_v_params: Vec<f64>,
    pub d_v_lambda: Vec<f64>,
    pub d_g_params: Vec<f64>,
    pub d_g_lambda: Vec<f64>,
}

pub fn lmi_loss_and_grads(ctx_v: &LmiContext<'_>, ctx_g: &LmiContext<'_>, c_l1: f64, c_l2: f64) -> Result<LmiLoss> {
    let gv = logdet_grad(ctx_v)?;
    let gg = logdet_grad(ctx_g)?;
    let neg = |v: Vec<f64>, c: f64| v.into_iter().map(|x| -c * x).collect::<Vec<_>>();
    Ok(LmiLoss {
        value: -c_l1 * gv.logdet - c_l2 * gg.logdet,
        logdet_v: gv.logdet,
        logdet_g: gg.logdet,
        d_v_params: neg(gv.d_params, c_l1),
        d_v_lambda: neg(gv.d_lambda, c_l1),
        d_g_params: neg(gg.d_params, c_l2),
        d_g_lambda: neg(gg.d_lambda, c_l2),
    })
}

/// Smallest bound (within relative tolerance `rtol`) at which the LMI is
/// positive definite for fixed multipliers, or `None` if it fails even at `max_bound`.
pub fn min_certified_bound(net: &Mlp, lambda: &[f64], max_bound: f64, rtol: f64) -> Result<Option<f64>> {
    let pd_at = |b: f64| -> Result<bool> { is_pd(&LmiContext::new(net, lambda, b)?) };
    if !pd_at(max_bound)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, max_bound);
    while hi - lo > rtol * hi {
        let mid = 0.5 * (lo + hi);
        if mid > 0.0 && pd_at(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{empirical_lipschitz, Activation};
    use crate::systems::AxisBox;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(sizes: &[usize], act: Activation, seed: u64, scale: f64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n = Mlp::zeros(sizes, act).unwrap();
        n.init_uniform(&mut rng, scale);
        n
    }

    #[test]
    fn zero_weights_give_block_diagonal() {
        let net = Mlp::zeros(&[2, 3, 1], Activation::Relu).unwrap();
        let lam = vec![1.0; 3];
        let m = build_lmi(&LmiContext::new(&net, &lam, 0.7).unwrap());
        let mut expected = DMatrix::<f64>::zeros(6, 6);
        for i in 0..2 {
            expected[(i, i)] = 0.7 * 0.7;
        }
        for i in 2..5 {
            expected[(i, i)] = 2.0;
        }
        expected[(5, 5)] = 1.0;
        assert_eq!(m, expected);
        let r = pd_logdet(&m).unwrap();
        assert!(r.is_pd);
        let want = 2.0 * (0.7f64 * 0.7).ln() + 3.0 * 2.0f64.ln();
        assert!((r.logdet.unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn pd_logdet_basics() {
        let r = pd_logdet(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!((r.is_pd, r.logdet), (true, Some(0.0)));
        let r = pd_logdet(&DMatrix::from_diagonal_element(2, 2, 2.0)).unwrap();
        assert!((r.logdet.unwrap() - 2.0 * 2.0f64.ln()).abs() < 1e-12);
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(!pd_logdet(&d).unwrap().is_pd);
        let bad = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(pd_logdet(&bad), Err(Error::NumericFault(_))));
    }

    #[test]
    fn symmetric_for_random_nets() {
        for (seed, act) in [(1, Activation::Relu), (2, Activation::Sigmoid), (3, Activation::Tanh)] {
            let net = random_net(&[3, 5, 4, 2], act, seed, 2.0);
            let lam: Vec<f64> = (0..9).map(|i| 0.3 + 0.1 * i as f64).collect();
            let m = build_lmi(&LmiContext::new(&net, &lam, 2.0).unwrap());
            let asym = (&m - m.transpose()).abs().max();
            assert!(asym <= 1e-14);
            assert_eq!(m.nrows(), lmi_dim(net.layer_sizes()));
        }
    }

    #[test]
    fn scaling_last_layer_touches_only_border() {
        let net = random_net(&[2, 4, 1], Activation::Relu, 4, 1.0);
        let mut scaled = net.clone();
        scaled.weight_mut(1).iter_mut().for_each(|v| *v *= 3.0);
        let lam = vec![0.5; 4];
        let a = build_lmi(&LmiContext::new(&net, &lam, 1.0).unwrap());
        let b = build_lmi(&LmiContext::new(&scaled, &lam, 1.0).unwrap());
        for i in 0..7 {
            for j in 0..7 {
                let border = (i == 6 && (2..6).contains(&j)) || (j == 6 && (2..6).contains(&i));
                if border {
                    assert_eq!(b[(i, j)], 3.0 * a[(i, j)]);
                } else {
                    assert_eq!(a[(i, j)], b[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn scalar_bound_is_tight() {
        let net = Mlp::from_layers(&[1, 1, 1], Activation::Relu, &[vec![vec![2.0]], vec![vec![-1.5]]], &[vec![0.3], vec![0.0]])
            .unwrap();
        let lam = vec![1.5 * 1.5];
        let b = min_certified_bound(&net, &lam, 100.0, 1e-10).unwrap().unwrap();
        assert!((b - 3.0).abs() < 1e-8, "{b}");
    }

    #[test]
    fn logdet_gradient_matches_finite_differences() {
        for (sizes, act) in [
            (vec![2, 3, 1], Activation::Relu),
            (vec![3, 4, 2], Activation::Sigmoid),
            (vec![2, 3, 3, 1], Activation::Tanh),
        ] {
            let net = random_net(&sizes, act, 17, 0.5);
            let h: usize = sizes[1..sizes.len() - 1].iter().sum();
            let lam: Vec<f64> = (0..h).map(|i| 0.8 + 0.05 * i as f64).collect();
            let ctx = LmiContext::new(&net, &lam, 1.5).unwrap();
            assert!(is_pd(&ctx).unwrap());
            let g = logdet_grad(&ctx).unwrap();
            let f = |n: &Mlp, l: &[f64]| {
                pd_logdet(&build_lmi(&LmiContext::new(n, l, 1.5).unwrap()))
                    .unwrap()
                    .logdet
                    .unwrap()
            };
            let step = 1e-6;
            for p in 0..net.num_params() {
                let mut a = net.clone();
                a.params_mut()[p] += step;
                let mut b = net.clone();
                b.params_mut()[p] -= step;
                let fd = (f(&a, &lam) - f(&b, &lam)) / (2.0 * step);
                assert!((fd - g.d_params[p]).abs() <= 1e-6 * fd.abs().max(1e-3), "param {p}: {fd} vs {}", g.d_params[p]);
            }
            for k in 0..lam.len() {
                let mut a = lam.clone();
                a[k] += step;
                let mut b = lam.clone();
                b[k] -= step;
                let fd = (f(&net, &a) - f(&net, &b)) / (2.0 * step);
                assert!((fd - g.d_lambda[k]).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn non_pd_is_an_infeasible_barrier() {
        let net = random_net(&[2, 3, 1], Activation::Relu, 1, 50.0);
        let lam = vec![1e-3; 3];
        let ctx = LmiContext::new(&net, &lam, 0.01).unwrap();
        assert!(matches!(logdet_grad(&ctx), Err(Error::InfeasibleBarrier(_))));
    }

    #[test]
    fn pd_implies_empirical_bound() {
        let domain = AxisBox::cube(2, -1.0, 1.0).unwrap();
        for seed in 0..5 {
            let net = random_net(&[2, 8, 1], Activation::Relu, seed, 2.0);
            let lam: Vec<f64> = vec![net.weight(1).iter().map(|v| v * v).sum::<f64>(); 8];
            let b = min_certified_bound(&net, &lam, 1e3, 1e-9).unwrap().unwrap();
            assert!(empirical_lipschitz(&net, &domain, 20_000, seed) <= b + 1e-9);
        }
    }

    #[test]
    fn barrier_grows_along_scaling_path() {
        let net = random_net(&[2, 6, 1], Activation::Relu, 8, 1.0);
        let lam = vec![1.0; 6];
        let mut last = f64::NEG_INFINITY;
        for i in 0..20 {
            let t = 0.1 + 0.1 * i as f64;
            let s = net.scaled(t);
            let r = pd_logdet(&build_lmi(&LmiContext::new(&s, &lam, 5.0).unwrap())).unwrap();
            if !r.is_pd {
                break;
            }
            let v = -r.logdet.unwrap();
            assert!(v >= last);
            last = v;
        }
    }
}
