//! Laplace-approximated negative log marginal likelihood of the
//! hyperparameters, plus brute-force references for tiny models.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

// inherent float methods shadow this whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{check_sample_size, map_estimate_with_prior, InnerSolveConfig, Prior};
use crate::kernels::{HyperParams, KernelMatrix};
use crate::model::{c_stable, hessian_terms_from, mean_square, residual_recursion, Sensitivities, Theta};
use crate::signals::{gaussian_vec, Dataset};

/// Largest parameter dimension accepted by the brute-force integrators.
pub const BRUTE_FORCE_MAX_DIM: usize = 4;
/// Gauss-Legendre nodes per dimension.
pub const QUADRATURE_NODES: usize = 40;
/// Half-width of the integration box, in posterior standard deviations.
pub const QUADRATURE_HALF_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianMode {
    /// Includes the second-order residual terms.
    #[default]
    Exact,
    GaussNewton,
}

impl HessianMode {
    pub fn name(self) -> &'static str {
        match self {
            HessianMode::Exact => "exact",
            HessianMode::GaussNewton => "gauss-newton",
        }
    }
}

impl core::str::FromStr for HessianMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(HessianMode::Exact),
            "gauss-newton" | "gauss_newton" | "gn" => Ok(HessianMode::GaussNewton),
            _ => Err(Error::InvalidParameter {
                name: "hessian_mode",
                value: f64::NAN,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvidenceConfig {
    pub hessian: HessianMode,
    pub inner: InnerSolveConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceValue {
    /// Full approximation, constant included.
    pub nll: f64,
    /// `nll - kappa`; what the hyperparameter search minimizes.
    pub nll_relative: f64,
    pub theta_tilde: Theta,
    /// `log|H|` with `H` the Hessian of `h` at `theta_tilde`.
    pub hessian_logdet: f64,
    /// The exact Hessian was indefinite and the Gauss-Newton one was used.
    pub gauss_newton_fallback: bool,
    pub inner_converged: bool,
    pub inner_iterations: usize,
}

impl EvidenceValue {
    pub fn flagged(&self) -> bool {
        self.gauss_newton_fallback || !self.inner_converged
    }
}

/// `dim/2 * log N + N/2 * log(2 pi sigma2)`, with `dim = nb + nc`.
pub fn kappa(n: usize, dim: usize, sigma2: f64) -> f64 {
    let nf = n as f64;
    0.5 * dim as f64 * nf.ln() + 0.5 * nf * (2.0 * PI * sigma2).ln()
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "sigma2",
            value: sigma2,
        })
    }
}

/// Laplace approximation at `t` taps per polynomial.
pub fn laplace_nll(
    eta: &HyperParams,
    t: usize,
    data: &Dataset,
    sigma2: f64,
    warm_start: Option<&Theta>,
    cfg: &EvidenceConfig,
) -> Result<EvidenceValue> {
    let k = KernelMatrix::with_sizes(eta, t, t)?;
    laplace_nll_with_kernel(&k, data, sigma2, warm_start, cfg)
}

pub fn laplace_nll_with_kernel(
    k: &KernelMatrix,
    data: &Dataset,
    sigma2: f64,
    warm_start: Option<&Theta>,
    cfg: &EvidenceConfig,
) -> Result<EvidenceValue> {
    check_sigma2(sigma2)?;
    check_sample_size(data.len(), k.nb(), k.nc())?;
    let n = data.len();
    let dim = k.dim();
    let inner = map_estimate_with_prior(data, Prior::Kernel(k), sigma2, warm_start, &cfg.inner)?;
    let theta = inner.theta;

    let sens = Sensitivities::new(&theta, data);
    let gram = sens.gram();
    let curvature = |with_second_order: bool| {
        let mut a = gram.clone();
        if with_second_order {
            a += hessian_terms_from(&theta, &sens).to_matrix();
        }
        let mut m = k.congruence(&(a / sigma2));
        m = (&m + m.transpose()) * 0.5;
        for i in 0..dim {
            m[(i, i)] += 1.0;
        }
        Cholesky::new(m).map(|ch| log_det_chol(ch.l_dirty()))
    };
    let (logdet_m, fallback) = match cfg.hessian {
        HessianMode::Exact => match curvature(true) {
            Some(v) => (v, false),
            None => (
                curvature(false).ok_or(Error::Singular("gauss-newton hessian"))?,
                true,
            ),
        },
        HessianMode::GaussNewton => (
            curvature(false).ok_or(Error::Singular("gauss-newton hessian"))?,
            false,
        ),
    };

    let nf = n as f64;
    let v = mean_square(&sens.eps);
    let quad = k.quad_form(&theta.stacked())?;
    let kap = kappa(n, dim, sigma2);
    let nll = nf / (2.0 * sigma2) * v + 0.5 * quad + 0.5 * logdet_m + 0.5 * nf * (2.0 * PI * sigma2).ln();
    let hessian_logdet = logdet_m - k.logdet() - dim as f64 * nf.ln();
    if !nll.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    Ok(EvidenceValue {
        nll,
        nll_relative: nll - kap,
        theta_tilde: theta,
        hessian_logdet,
        gauss_newton_fallback: fallback,
        inner_converged: inner.converged,
        inner_iterations: inner.iterations,
    })
}

fn log_det_chol(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Hessian of `h` at `theta` (exact second-order residual terms included).
pub fn hessian_of_h(theta: &Theta, eta: &HyperParams, data: &Dataset, sigma2: f64) -> Result<DMatrix<f64>> {
    hessian_of_h_with(theta, eta, data, sigma2, HessianMode::Exact)
}

pub fn hessian_of_h_with(
    theta: &Theta,
    eta: &HyperParams,
    data: &Dataset,
    sigma2: f64,
    mode: HessianMode,
) -> Result<DMatrix<f64>> {
    check_sigma2(sigma2)?;
    crate::model::ensure_stable(theta.c(), crate::model::DEFAULT_STABILITY_MARGIN)?;
    let k = KernelMatrix::with_sizes(eta, theta.nb(), theta.nc())?;
    let nf = data.len() as f64;
    let sens = Sensitivities::new(theta, data);
    let mut a = sens.gram();
    if mode == HessianMode::Exact {
        a += hessian_terms_from(theta, &sens).to_matrix();
    }
    let h = a / (sigma2 * nf) + k.inverse() / nf;
    Ok((&h + h.transpose()) * 0.5)
}

/// `-log p(y, theta)` for the Gaussian prior `N(0, K)`; infinite outside
/// the stability region.
fn neg_log_joint(theta: &[f64], k: &KernelMatrix, data: &Dataset, sigma2: f64) -> f64 {
    let nb = k.nb();
    if !c_stable(&theta[nb..], 1.0) {
        return f64::INFINITY;
    }
    let nf = data.len() as f64;
    let eps = residual_recursion(&theta[..nb], &theta[nb..], data.u(), data.y());
    let v = mean_square(&eps);
    let quad = k.quad_form(theta).expect("dimension checked");
    let val = nf / (2.0 * sigma2) * v
        + 0.5 * quad
        + 0.5 * k.logdet()
        + 0.5 * k.dim() as f64 * (2.0 * PI).ln()
        + 0.5 * nf * (2.0 * PI * sigma2).ln();
    if val.is_nan() {
        f64::INFINITY
    } else {
        val
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // P_n(z) and its derivative by the three-term recurrence
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn dim_guard(dim: usize) -> Result<()> {
    if dim > BRUTE_FORCE_MAX_DIM {
        Err(Error::DimensionGuard {
            dim,
            max: BRUTE_FORCE_MAX_DIM,
        })
    } else {
        Ok(())
    }
}

/// `-log p(y | eta, sigma2)` by tensor-product Gauss-Legendre quadrature on
/// a box centered at the MAP estimate and aligned with the Gauss-Newton
/// posterior covariance. `t` taps per polynomial; `nc = 0` gives an FIR model.
pub fn marginal_nll_bruteforce(eta: &HyperParams, nb: usize, nc: usize, data: &Dataset, sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    dim_guard(nb + nc)?;
    let k = KernelMatrix::with_sizes(eta, nb, nc)?;
    let dim = k.dim();
    let inner = map_estimate_with_prior(data, Prior::Kernel(&k), sigma2, None, &InnerSolveConfig::default())?;
    let center = inner.theta.stacked();

    // N * Hessian (Gauss-Newton) of -log p(y, theta) sets the box orientation.
    let sens = Sensitivities::new(&inner.theta, data);
    let prec = sens.gram() / sigma2 + k.inverse();
    let ch = Cholesky::new((&prec + prec.transpose()) * 0.5).ok_or(Error::Singular("posterior precision"))?;
    // theta = center + L^-T z
    let lt = ch.l().transpose();
    let log_jac = -0.5 * log_det_chol(ch.l_dirty());

    let (nodes, weights) = gauss_legendre(QUADRATURE_NODES);
    let h = QUADRATURE_HALF_WIDTH;
    let total = QUADRATURE_NODES.pow(dim as u32);
    let mut idx = vec![0usize; dim];
    let mut terms = Vec::with_capacity(total);
    let mut z = DVector::zeros(dim);
    for _ in 0..total {
        let mut log_w = 0.0;
        for d in 0..dim {
            z[d] = h * nodes[idx[d]];
            log_w += (h * weights[idx[d]]).ln();
        }
        let offset = lt.solve_upper_triangular(&z).expect("positive diagonal");
        let theta: Vec<f64> = center.iter().zip(offset.iter()).map(|(c, o)| c + o).collect();
        terms.push(log_w - neg_log_joint(&theta, &k, data, sigma2));
        for d in 0..dim {
            idx[d] += 1;
            if idx[d] < QUADRATURE_NODES {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(-(log_jac + log_sum_exp(&terms)))
}

/// `-log p(y | eta, sigma2)` by plain Monte Carlo with draws from the prior.
pub fn marginal_nll_monte_carlo(
    eta: &HyperParams,
    nb: usize,
    nc: usize,
    data: &Dataset,
    sigma2: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    check_sigma2(sigma2)?;
    dim_guard(nb + nc)?;
    if draws == 0 {
        return Err(Error::InvalidParameter {
            name: "draws",
            value: 0.0,
        });
    }
    let k = KernelMatrix::with_sizes(eta, nb, nc)?;
    let nf = data.len() as f64;
    let konst = 0.5 * nf * (2.0 * PI * sigma2).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::with_capacity(draws);
    for _ in 0..draws {
        let theta = k.color(&gaussian_vec(&mut rng, k.dim(), 1.0));
        if !c_stable(&theta[nb..], 1.0) {
            continue;
        }
        let eps = residual_recursion(&theta[..nb], &theta[nb..], data.u(), data.y());
        let loglik = -nf / (2.0 * sigma2) * mean_square(&eps) - konst;
        if loglik.is_finite() {
            terms.push(loglik);
        }
    }
    Ok(-(log_sum_exp(&terms) - (draws as f64).ln()))
}

/// Exact evidence of an FIR model (no `c` taps): `y ~ N(0, Phi K_b Phi^T + sigma2 I)`.
pub fn fir_marginal_nll(eta: &HyperParams, nb: usize, data: &Dataset, sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    let k = KernelMatrix::with_sizes(eta, nb, 0)?;
    let n = data.len();
    let u = data.u();
    let phi = DMatrix::from_fn(n, nb, |i, j| if i > j { u[i - 1 - j] } else { 0.0 });
    let mut cov = &phi * k.b_block() * phi.transpose();
    for i in 0..n {
        cov[(i, i)] += sigma2;
    }
    let ch = Cholesky::new(cov).ok_or(Error::Singular("output covariance"))?;
    let y = DVector::from_column_slice(data.y());
    let alpha = ch.l().solve_lower_triangular(&y).expect("positive diagonal");
    Ok(0.5 * alpha.norm_squared() + 0.5 * log_det_chol(ch.l_dirty()) + 0.5 * n as f64 * (2.0 * PI).ln())
}
