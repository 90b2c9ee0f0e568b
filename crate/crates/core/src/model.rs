//! High-order MAX model `y(t) = B(z) u(t-1) + C(z) e(t)`.
//!
//! `B(z) = b_0 + ... + b_{nb-1} z^-(nb-1)` and `C(z) = 1 + c_1 z^-1 + ... + c_nc z^-nc`.
//! The one-step-ahead prediction error obeys
//! `C(z) eps(t) = y(t) - B(z) u(t-1)`, evaluated with zero initial conditions.

use alloc::vec;
use alloc::vec::Vec;

// inherent float methods shadow this whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::signals::{inverse_monic, Dataset, Polynomial, TimeSeries};

/// Roots with modulus at or above this value are treated as unstable.
pub const DEFAULT_STABILITY_MARGIN: f64 = 1.0 - 1e-6;

/// Stacked parameter vector `[b; c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    b: Vec<f64>,
    c: Vec<f64>,
}

impl Theta {
    pub fn new(b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if let Some(index) = b.iter().chain(&c).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { b, c })
    }

    pub fn zeros(nb: usize, nc: usize) -> Self {
        Self {
            b: vec![0.0; nb],
            c: vec![0.0; nc],
        }
    }

    pub fn from_stacked(v: &[f64], nb: usize) -> Result<Self> {
        if v.len() < nb {
            return Err(Error::LengthMismatch {
                expected: nb,
                found: v.len(),
            });
        }
        Self::new(v[..nb].to_vec(), v[nb..].to_vec())
    }

    /// Input taps `b_0..b_{nb-1}`.
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Noise taps `c_1..c_nc` (`c_0 = 1` is implicit).
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn nb(&self) -> usize {
        self.b.len()
    }

    pub fn nc(&self) -> usize {
        self.c.len()
    }

    pub fn dim(&self) -> usize {
        self.b.len() + self.c.len()
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.b.clone();
        v.extend_from_slice(&self.c);
        v
    }

    /// Zero-pads (or truncates) both impulse responses to `t` taps.
    pub fn padded(&self, t: usize) -> Theta {
        let mut b = self.b.clone();
        let mut c = self.c.clone();
        b.resize(t, 0.0);
        c.resize(t, 0.0);
        Theta { b, c }
    }

    pub fn b_poly(&self) -> Polynomial {
        Polynomial::new(if self.b.is_empty() { vec![0.0] } else { self.b.clone() })
            .expect("finite taps")
    }

    pub fn c_poly(&self) -> Polynomial {
        Polynomial::monic(&self.c).expect("finite taps")
    }
}

/// A MAX model together with its innovation variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxModel {
    pub theta: Theta,
    pub sigma2: f64,
}

impl MaxModel {
    pub fn new(theta: Theta, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidParameter {
                name: "sigma2",
                value: sigma2,
            });
        }
        Ok(Self { theta, sigma2 })
    }
}

/// Simulates `y(t) = sum_k b_k u(t-1-k) + e(t) + sum_k c_k e(t-k)`.
pub fn simulate(model: &MaxModel, u: &TimeSeries, e: &TimeSeries) -> Result<TimeSeries> {
    simulate_theta(&model.theta, u.values(), e.values()).and_then(TimeSeries::new)
}

pub(crate) fn simulate_theta(theta: &Theta, u: &[f64], e: &[f64]) -> Result<Vec<f64>> {
    if u.len() != e.len() {
        return Err(Error::LengthMismatch {
            expected: u.len(),
            found: e.len(),
        });
    }
    let n = u.len();
    let mut y = vec![0.0; n];
    for t in 0..n {
        let mut acc = e[t];
        for (k, bk) in theta.b.iter().enumerate() {
            if t >= k + 1 {
                acc += bk * u[t - 1 - k];
            }
        }
        for (k, ck) in theta.c.iter().enumerate() {
            if t >= k + 1 {
                acc += ck * e[t - 1 - k];
            }
        }
        y[t] = acc;
    }
    Ok(y)
}

/// One-step-ahead prediction errors; fails if `C` is not stable.
pub fn residuals(theta: &Theta, data: &Dataset) -> Result<Vec<f64>> {
    ensure_stable(theta.c(), DEFAULT_STABILITY_MARGIN)?;
    residuals_unchecked(theta, data)
}

/// Prediction-error recursion without the stability check.
pub fn residuals_unchecked(theta: &Theta, data: &Dataset) -> Result<Vec<f64>> {
    Ok(residual_recursion(theta.b(), theta.c(), data.u(), data.y()))
}

pub(crate) fn residual_recursion(b: &[f64], c: &[f64], u: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut eps = vec![0.0; n];
    for t in 0..n {
        let mut acc = y[t];
        let nb = b.len().min(t);
        for k in 0..nb {
            acc -= b[k] * u[t - 1 - k];
        }
        let nc = c.len().min(t);
        for k in 0..nc {
            acc -= c[k] * eps[t - 1 - k];
        }
        eps[t] = acc;
    }
    eps
}

/// One-step-ahead predictions `y(t) - eps(t)`.
pub fn predict(theta: &Theta, data: &Dataset) -> Result<TimeSeries> {
    let eps = residuals(theta, data)?;
    TimeSeries::new(data.y().iter().zip(&eps).map(|(y, e)| y - e).collect())
}

/// Average squared prediction error `V_N`.
pub fn v_n(theta: &Theta, data: &Dataset) -> Result<f64> {
    let eps = residuals(theta, data)?;
    Ok(mean_square(&eps))
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|e| e * e).sum::<f64>() / x.len() as f64
}

/// `x(i - shift)` with a zero pre-window.
#[inline]
fn lagged(x: &[f64], i: usize, shift: usize) -> f64 {
    if i >= shift {
        x[i - shift]
    } else {
        0.0
    }
}

/// Dense Jacobian `d eps(t) / d theta`, `N x (nb + nc)`.
pub fn jacobian(theta: &Theta, data: &Dataset) -> Result<DMatrix<f64>> {
    ensure_stable(theta.c(), DEFAULT_STABILITY_MARGIN)?;
    let s = Sensitivities::new(theta, data);
    let n = data.len();
    let (nb, nc) = (theta.nb(), theta.nc());
    let mut psi = DMatrix::zeros(n, nb + nc);
    for i in 0..n {
        for j in 0..nb {
            psi[(i, j)] = -lagged(&s.w_u, i, 1 + j);
        }
        for k in 0..nc {
            psi[(i, nb + k)] = -lagged(&s.w_e, i, 1 + k);
        }
    }
    Ok(psi)
}

/// Residuals plus the `C^-1`-filtered signals from which every derivative
/// of `eps` is obtained by shifting.
pub(crate) struct Sensitivities {
    pub eps: Vec<f64>,
    /// `C^-1 u`
    pub w_u: Vec<f64>,
    /// `C^-1 eps`
    pub w_e: Vec<f64>,
    nb: usize,
    nc: usize,
}

impl Sensitivities {
    pub fn new(theta: &Theta, data: &Dataset) -> Self {
        let eps = residual_recursion(theta.b(), theta.c(), data.u(), data.y());
        Self::from_residuals(theta, data, eps)
    }

    pub fn from_residuals(theta: &Theta, data: &Dataset, eps: Vec<f64>) -> Self {
        let w_u = if theta.nb() > 0 {
            inverse_monic(theta.c(), data.u())
        } else {
            Vec::new()
        };
        let w_e = if theta.nc() > 0 {
            inverse_monic(theta.c(), &eps)
        } else {
            Vec::new()
        };
        Self {
            eps,
            w_u,
            w_e,
            nb: theta.nb(),
            nc: theta.nc(),
        }
    }

    /// `Psi^T eps`, the gradient of `0.5 * sum eps^2`.
    pub fn gradient(&self) -> Vec<f64> {
        let mut g = lagged_cross(&self.eps, &self.w_u, 1, self.nb);
        g.extend(lagged_cross(&self.eps, &self.w_e, 1, self.nc));
        for v in g.iter_mut() {
            *v = -*v;
        }
        g
    }

    /// `Psi^T Psi`, built from shifted autocorrelations in `O(N (nb + nc))`.
    pub fn gram(&self) -> DMatrix<f64> {
        let (nb, nc) = (self.nb, self.nc);
        let mut g = DMatrix::zeros(nb + nc, nb + nc);
        if nb > 0 {
            let bb = lagged_gram(&self.w_u, &self.w_u, nb, nb);
            g.view_mut((0, 0), (nb, nb)).copy_from(&bb);
        }
        if nc > 0 {
            let cc = lagged_gram(&self.w_e, &self.w_e, nc, nc);
            g.view_mut((nb, nb), (nc, nc)).copy_from(&cc);
        }
        if nb > 0 && nc > 0 {
            let bc = lagged_gram(&self.w_u, &self.w_e, nb, nc);
            g.view_mut((0, nb), (nb, nc)).copy_from(&bc);
            g.view_mut((nb, 0), (nc, nb)).copy_from(&bc.transpose());
        }
        g
    }
}

/// `r(j) = sum_i a(i) x(i - shift - j)` for `j = 0..n`.
pub(crate) fn lagged_cross(a: &[f64], x: &[f64], shift: usize, n: usize) -> Vec<f64> {
    let len = a.len();
    (0..n)
        .map(|j| {
            let s = shift + j;
            if s >= len {
                return 0.0;
            }
            a[s..].iter().zip(x).map(|(p, q)| p * q).sum()
        })
        .collect()
}

/// `G(j, k) = sum_i x(i-1-j) w(i-1-k)` with zero pre-window.
pub(crate) fn lagged_gram(x: &[f64], w: &[f64], nx: usize, nw: usize) -> DMatrix<f64> {
    let n = x.len();
    let mut g = DMatrix::zeros(nx, nw);
    if n < 2 {
        return g;
    }
    // G(0, k) = sum_{s=k}^{n-2} x(s) w(s-k)
    for k in 0..nw {
        if k <= n - 2 {
            g[(0, k)] = x[k..=n - 2].iter().zip(w).map(|(p, q)| p * q).sum();
        }
    }
    // G(j, 0) = sum_{s=j}^{n-2} x(s-j) w(s)
    for j in 1..nx {
        if j <= n - 2 {
            g[(j, 0)] = w[j..=n - 2].iter().zip(x).map(|(p, q)| p * q).sum();
        }
    }
    // G(j+1, k+1) = G(j, k) - x(n-2-j) w(n-2-k)
    for j in 0..nx.saturating_sub(1) {
        for k in 0..nw.saturating_sub(1) {
            let tail = if j + 2 <= n && k + 2 <= n {
                x[n - 2 - j] * w[n - 2 - k]
            } else {
                0.0
            };
            g[(j + 1, k + 1)] = g[(j, k)] - tail;
        }
    }
    g
}

/// Second-order contribution `sum_t eps(t) d^2 eps(t) / d theta d theta^T`.
///
/// The `bb` block vanishes because `eps` is affine in `b`; the other blocks
/// depend only on `j + k`, so they are stored as two correlation sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianTerms {
    nb: usize,
    nc: usize,
    /// `bc(s) = sum_t eps(t) [C^-2 u](t - s)`
    bc: Vec<f64>,
    /// `cc(s) = sum_t eps(t) [C^-2 eps](t - s)`
    cc: Vec<f64>,
}

impl HessianTerms {
    /// Entry for `(b_j, c_k)`, `j` 0-based tap, `k` 1-based tap.
    pub fn bc(&self, j: usize, k: usize) -> f64 {
        self.bc[1 + j + k]
    }

    /// Entry for `(c_j, c_k)`, both 1-based.
    pub fn cc(&self, j: usize, k: usize) -> f64 {
        2.0 * self.cc[j + k]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let (nb, nc) = (self.nb, self.nc);
        let mut s = DMatrix::zeros(nb + nc, nb + nc);
        for j in 0..nb {
            for k in 0..nc {
                let v = self.bc(j, k + 1);
                s[(j, nb + k)] = v;
                s[(nb + k, j)] = v;
            }
        }
        for j in 0..nc {
            for k in 0..nc {
                s[(nb + j, nb + k)] = self.cc(j + 1, k + 1);
            }
        }
        s
    }
}

/// Second-order residual terms of the Hessian of `0.5 * sum eps^2`.
pub fn hessian_terms(theta: &Theta, data: &Dataset) -> Result<HessianTerms> {
    ensure_stable(theta.c(), DEFAULT_STABILITY_MARGIN)?;
    let s = Sensitivities::new(theta, data);
    Ok(hessian_terms_from(theta, &s))
}

pub(crate) fn hessian_terms_from(theta: &Theta, s: &Sensitivities) -> HessianTerms {
    let (nb, nc) = (theta.nb(), theta.nc());
    let mut bc = vec![0.0; nb + nc + 1];
    let mut cc = vec![0.0; 2 * nc + 1];
    if nc > 0 {
        if nb > 0 {
            let v_u = inverse_monic(theta.c(), &s.w_u);
            let r = lagged_cross(&s.eps, &v_u, 0, nb + nc + 1);
            bc.copy_from_slice(&r);
        }
        let v_e = inverse_monic(theta.c(), &s.w_e);
        let r = lagged_cross(&s.eps, &v_e, 0, 2 * nc + 1);
        cc.copy_from_slice(&r);
    }
    HessianTerms { nb, nc, bc, cc }
}

/// True iff every root of `1 + c_1 z^-1 + ... + c_n z^-n` has modulus
/// strictly below `margin`.
///
/// Uses the Schur-Cohn step-down recursion on the radius-scaled polynomial;
/// [`root_moduli`] gives the companion-matrix roots for reporting.
pub fn c_stable(c: &[f64], margin: f64) -> bool {
    let n = c.len();
    if n == 0 {
        return true;
    }
    if c.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut a: Vec<f64> = Vec::with_capacity(n + 1);
    a.push(1.0);
    let mut scale = 1.0;
    for ck in c {
        scale /= margin;
        a.push(ck * scale);
    }
    let mut next = vec![0.0; n + 1];
    for m in (1..=n).rev() {
        let k = a[m];
        if !(k.abs() < 1.0) {
            return false;
        }
        let denom = 1.0 - k * k;
        next[0] = 1.0;
        for i in 1..m {
            next[i] = (a[i] - k * a[m - i]) / denom;
        }
        a[..m].copy_from_slice(&next[..m]);
    }
    true
}

pub(crate) fn ensure_stable(c: &[f64], margin: f64) -> Result<()> {
    if c_stable(c, margin) {
        Ok(())
    } else {
        let max_modulus = root_moduli(c).into_iter().fold(0.0, f64::max);
        Err(Error::Unstable { max_modulus })
    }
}

/// Roots of the monic polynomial `z^n + c_1 z^(n-1) + ... + c_n`.
pub fn roots(c: &[f64]) -> Vec<Complex<f64>> {
    let mut c = c;
    while let Some((&last, head)) = c.split_last() {
        if last == 0.0 {
            c = head;
        } else {
            break;
        }
    }
    let n = c.len();
    if n == 0 {
        return Vec::new();
    }
    let mut companion = DMatrix::zeros(n, n);
    for (k, ck) in c.iter().enumerate() {
        companion[(0, k)] = -ck;
    }
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    let mut out: Vec<Complex<f64>> = match companion.clone().try_schur(1e-14, 10_000) {
        Some(schur) => schur.complex_eigenvalues().iter().copied().collect(),
        None => Vec::new(),
    };
    out.resize(n, Complex::new(0.0, 0.0));
    out
}

fn modulus(r: &Complex<f64>) -> f64 {
    r.re.hypot(r.im)
}

/// Root moduli of `C`, zero roots from trailing zero taps included.
pub fn root_moduli(c: &[f64]) -> Vec<f64> {
    let mut m: Vec<f64> = roots(c).iter().map(modulus).collect();
    m.resize(c.len(), 0.0);
    m
}

/// Stability classification and root moduli of `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub stable: bool,
    pub root_moduli: Vec<f64>,
}

pub fn stability_report(c: &[f64], margin: f64) -> StabilityReport {
    StabilityReport {
        stable: c_stable(c, margin),
        root_moduli: root_moduli(c),
    }
}

/// Monic polynomial tail `[c_1..c_n]` with the given roots.
pub fn poly_from_roots(roots: &[Complex<f64>]) -> Vec<f64> {
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (i, a) in coeffs.iter().enumerate() {
            next[i] += *a;
            next[i + 1] -= *a * r;
        }
        coeffs = next;
    }
    coeffs[1..].iter().map(|z| z.re).collect()
}

/// Reflects roots of `C` lying outside the stability margin to the inside,
/// used to sanitize user-supplied starting points.
pub fn reflect_unstable_roots(c: &[f64], margin: f64) -> Vec<f64> {
    if c_stable(c, margin) {
        return c.to_vec();
    }
    let rs: Vec<Complex<f64>> = roots(c)
        .into_iter()
        .map(|r| {
            let m = modulus(&r);
            if m < margin {
                return r;
            }
            let target = (1.0 / m).min(margin * margin);
            r * (target / m)
        })
        .collect();
    let mut out = poly_from_roots(&rs);
    out.resize(c.len(), 0.0);
    out
}

/// First `t` impulse-response taps of `num / den` without a stability check.
pub fn impulse_response(num: &[f64], den: &[f64], t: usize) -> Result<Vec<f64>> {
    let d0 = *den.first().ok_or(Error::EmptySeries)?;
    if d0 == 0.0 {
        return Err(Error::NonCausalDenominator);
    }
    let mut out = vec![0.0; t];
    for k in 0..t {
        let mut acc = num.get(k).copied().unwrap_or(0.0);
        for (j, dj) in den.iter().enumerate().skip(1).take(k) {
            acc -= dj * out[k - j];
        }
        out[k] = acc / d0;
    }
    Ok(out)
}

/// First `t` impulse-response taps of a stable `num / den`.
pub fn truncate_ir(num: &Polynomial, den: &Polynomial, t: usize) -> Result<Vec<f64>> {
    let d = den.coeffs();
    if d[0] == 0.0 {
        return Err(Error::NonCausalDenominator);
    }
    let tail: Vec<f64> = d[1..].iter().map(|v| v / d[0]).collect();
    if !c_stable(&tail, 1.0) {
        let max_modulus = root_moduli(&tail).into_iter().fold(0.0, f64::max);
        return Err(Error::Unstable { max_modulus });
    }
    impulse_response(num.coeffs(), d, t)
}
