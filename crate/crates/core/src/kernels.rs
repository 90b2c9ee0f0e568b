//! Stable-kernel priors for the `b` and `c` impulse responses.
//!
//! Both kernels are indexed from 1: row `r` of the `b` block carries
//! `b_{r-1}` and row `r` of the `c` block carries `c_r`, which is the
//! stacking order of [`crate::model::Theta`].

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

// inherent float methods shadow this whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower/upper limits of the search box used when tuning hyperparameters.
pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1e6;
pub const UNIT_MIN: f64 = 1e-3;
pub const UNIT_MAX: f64 = 1.0 - 1e-3;

const JITTER_ESCALATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// Tuned/correlated kernel, `beta^max(i,j)`.
    Tc,
    /// Second-order diagonal/correlated kernel with smoothness `alpha`.
    Dc2,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Tc => "tc",
            KernelKind::Dc2 => "dc2",
        }
    }

    /// Number of hyperparameters in `eta`.
    pub fn arity(self) -> usize {
        match self {
            KernelKind::Tc => 4,
            KernelKind::Dc2 => 6,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tc" => Ok(KernelKind::Tc),
            "dc2" | "d2" => Ok(KernelKind::Dc2),
            _ => Err(Error::InvalidParameter {
                name: "kernel",
                value: f64::NAN,
            }),
        }
    }
}

/// Kernel hyperparameters `eta`. The `alpha` fields are ignored for TC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub kind: KernelKind,
    pub lambda_b: f64,
    pub lambda_c: f64,
    pub beta_b: f64,
    pub beta_c: f64,
    pub alpha_b: f64,
    pub alpha_c: f64,
}

impl HyperParams {
    pub fn tc(lambda_b: f64, lambda_c: f64, beta_b: f64, beta_c: f64) -> Self {
        Self {
            kind: KernelKind::Tc,
            lambda_b,
            lambda_c,
            beta_b,
            beta_c,
            alpha_b: 0.0,
            alpha_c: 0.0,
        }
    }

    pub fn dc2(
        lambda_b: f64,
        lambda_c: f64,
        beta_b: f64,
        beta_c: f64,
        alpha_b: f64,
        alpha_c: f64,
    ) -> Self {
        Self {
            kind: KernelKind::Dc2,
            lambda_b,
            lambda_c,
            beta_b,
            beta_c,
            alpha_b,
            alpha_c,
        }
    }

    /// Starting point of the hyperparameter search.
    pub fn initial(kind: KernelKind) -> Self {
        match kind {
            KernelKind::Tc => Self::tc(1.0, 1.0, 0.8, 0.8),
            KernelKind::Dc2 => Self::dc2(1.0, 1.0, 0.8, 0.8, 0.5, 0.5),
        }
    }

    /// Checks membership in the open feasible set.
    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, value: v })
            }
        };
        let unit = |name, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, value: v })
            }
        };
        positive("lambda_b", self.lambda_b)?;
        positive("lambda_c", self.lambda_c)?;
        unit("beta_b", self.beta_b)?;
        unit("beta_c", self.beta_c)?;
        if self.kind == KernelKind::Dc2 {
            unit("alpha_b", self.alpha_b)?;
            unit("alpha_c", self.alpha_c)?;
        }
        Ok(())
    }

    /// Active hyperparameters in the order
    /// `lambda_b, lambda_c, beta_b, beta_c[, alpha_b, alpha_c]`.
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.lambda_b, self.lambda_c, self.beta_b, self.beta_c];
        if self.kind == KernelKind::Dc2 {
            v.push(self.alpha_b);
            v.push(self.alpha_c);
        }
        v
    }

    /// Maps `eta` to unconstrained search coordinates
    /// (log for scales, scaled logit for rates).
    pub fn to_search(&self) -> Vec<f64> {
        let mut x = vec![
            log_box(self.lambda_b),
            log_box(self.lambda_c),
            logit_box(self.beta_b),
            logit_box(self.beta_c),
        ];
        if self.kind == KernelKind::Dc2 {
            x.push(logit_box(self.alpha_b));
            x.push(logit_box(self.alpha_c));
        }
        x
    }

    /// Inverse of [`HyperParams::to_search`]; every real vector lands inside
    /// the tightened box.
    pub fn from_search(kind: KernelKind, x: &[f64]) -> Result<Self> {
        if x.len() != kind.arity() {
            return Err(Error::LengthMismatch {
                expected: kind.arity(),
                found: x.len(),
            });
        }
        let lb = exp_box(x[0]);
        let lc = exp_box(x[1]);
        let bb = logistic_box(x[2]);
        let bc = logistic_box(x[3]);
        Ok(match kind {
            KernelKind::Tc => Self::tc(lb, lc, bb, bc),
            KernelKind::Dc2 => Self::dc2(lb, lc, bb, bc, logistic_box(x[4]), logistic_box(x[5])),
        })
    }
}

fn log_box(v: f64) -> f64 {
    v.clamp(LAMBDA_MIN, LAMBDA_MAX).ln()
}

fn exp_box(x: f64) -> f64 {
    if x >= LAMBDA_MAX.ln() {
        LAMBDA_MAX
    } else if x <= LAMBDA_MIN.ln() {
        LAMBDA_MIN
    } else {
        x.exp()
    }
}

fn logit_box(v: f64) -> f64 {
    let s = ((v - UNIT_MIN) / (UNIT_MAX - UNIT_MIN)).clamp(1e-12, 1.0 - 1e-12);
    (s / (1.0 - s)).ln()
}

fn logistic_box(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    UNIT_MIN + (UNIT_MAX - UNIT_MIN) * s
}

fn check_unit(name: &'static str, v: f64, allow_zero: bool) -> Result<()> {
    let lower_ok = if allow_zero { v >= 0.0 } else { v > 0.0 };
    if lower_ok && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, value: v })
    }
}

/// TC kernel, `K_ij = beta^max(i,j)` with 1-based indices.
pub fn tc_kernel(beta: f64, t: usize) -> Result<DMatrix<f64>> {
    check_unit("beta", beta, false)?;
    let mut k = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in i..t {
            let v = beta.powi((j + 1) as i32);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// DC2 kernel,
/// `K_ij = beta^m (1 - (1-beta) alpha^(|i-j|+1)) - alpha^2 beta^(m+1)`, `m = max(i,j)`.
pub fn dc2_kernel(beta: f64, alpha: f64, t: usize) -> Result<DMatrix<f64>> {
    check_unit("beta", beta, false)?;
    check_unit("alpha", alpha, true)?;
    let mut k = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in i..t {
            let m = (j + 1) as i32;
            let bm = beta.powi(m);
            let v = bm * (1.0 - (1.0 - beta) * alpha.powi((j - i + 1) as i32))
                - alpha * alpha * beta.powi(m + 1);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

fn block_kernel(kind: KernelKind, lambda: f64, beta: f64, alpha: f64, t: usize) -> Result<DMatrix<f64>> {
    let base = match kind {
        KernelKind::Tc => tc_kernel(beta, t)?,
        KernelKind::Dc2 => dc2_kernel(beta, alpha, t)?,
    };
    Ok(base * lambda)
}

/// Factored block of the prior covariance.
#[derive(Debug, Clone)]
struct FactoredBlock {
    k: DMatrix<f64>,
    l: DMatrix<f64>,
    jitter: f64,
}

impl FactoredBlock {
    fn new(k: DMatrix<f64>, block: &'static str) -> Result<Self> {
        let n = k.nrows();
        if n == 0 {
            return Ok(Self {
                l: DMatrix::zeros(0, 0),
                k,
                jitter: 0.0,
            });
        }
        if let Some(ch) = Cholesky::new(k.clone()) {
            return Ok(Self {
                l: ch.unpack(),
                k,
                jitter: 0.0,
            });
        }
        let mut jitter = 1e-10 * k.trace() / n as f64;
        for _ in 0..=JITTER_ESCALATIONS {
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            if let Some(ch) = Cholesky::new(kj.clone()) {
                return Ok(Self {
                    l: ch.unpack(),
                    k: kj,
                    jitter,
                });
            }
            jitter *= 10.0;
        }
        Err(Error::Factorization {
            block,
            jitter: jitter / 10.0,
        })
    }
}

/// Block-diagonal prior covariance `blockdiag(lambda_b K_b, lambda_c K_c)`
/// together with its Cholesky factor and log-determinant.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    b: FactoredBlock,
    c: FactoredBlock,
    logdet: f64,
}

impl KernelMatrix {
    /// Prior for `nb` input taps and `nc` noise taps. `nc = 0` drops the
    /// noise block entirely.
    pub fn with_sizes(eta: &HyperParams, nb: usize, nc: usize) -> Result<Self> {
        eta.validate()?;
        let kb = block_kernel(eta.kind, eta.lambda_b, eta.beta_b, eta.alpha_b, nb)?;
        let kc = block_kernel(eta.kind, eta.lambda_c, eta.beta_c, eta.alpha_c, nc)?;
        Self::from_blocks(kb, kc)
    }

    /// Builds the prior from explicit (symmetric) covariance blocks.
    pub fn from_blocks(kb: DMatrix<f64>, kc: DMatrix<f64>) -> Result<Self> {
        let b = FactoredBlock::new(kb, "b")?;
        let c = FactoredBlock::new(kc, "c")?;
        let logdet = 2.0
            * b.l
                .diagonal()
                .iter()
                .chain(c.l.diagonal().iter())
                .map(|d| d.ln())
                .sum::<f64>();
        Ok(Self { b, c, logdet })
    }

    pub fn nb(&self) -> usize {
        self.b.k.nrows()
    }

    pub fn nc(&self) -> usize {
        self.c.k.nrows()
    }

    pub fn dim(&self) -> usize {
        self.nb() + self.nc()
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Diagonal jitter added to the `b` and `c` blocks during factorization.
    pub fn jitter(&self) -> (f64, f64) {
        (self.b.jitter, self.c.jitter)
    }

    pub fn b_block(&self) -> &DMatrix<f64> {
        &self.b.k
    }

    pub fn c_block(&self) -> &DMatrix<f64> {
        &self.c.k
    }

    /// Lower Cholesky factor of the `b` block.
    pub fn b_factor(&self) -> &DMatrix<f64> {
        &self.b.l
    }

    /// Lower Cholesky factor of the `c` block.
    pub fn c_factor(&self) -> &DMatrix<f64> {
        &self.c.l
    }

    /// Dense `2T x 2T` covariance.
    pub fn matrix(&self) -> DMatrix<f64> {
        block_diag(&self.b.k, &self.c.k)
    }

    /// Dense lower Cholesky factor.
    pub fn chol(&self) -> DMatrix<f64> {
        block_diag(&self.b.l, &self.c.l)
    }

    /// `theta^T K^-1 theta` via triangular solves.
    pub fn quad_form(&self, theta: &[f64]) -> Result<f64> {
        let z = self.whiten(theta)?;
        Ok(z.iter().map(|v| v * v).sum())
    }

    /// `z = L^-1 theta`.
    pub fn whiten(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                found: theta.len(),
            });
        }
        let nb = self.nb();
        let mut z = Vec::with_capacity(theta.len());
        z.extend(lower_solve(&self.b.l, &theta[..nb]));
        z.extend(lower_solve(&self.c.l, &theta[nb..]));
        Ok(z)
    }

    /// `theta = L z`.
    pub fn color(&self, z: &[f64]) -> Vec<f64> {
        let nb = self.nb();
        let mut out = Vec::with_capacity(z.len());
        out.extend(lower_mul(&self.b.l, &z[..nb]));
        out.extend(lower_mul(&self.c.l, &z[nb..]));
        out
    }

    /// `L^T A L` for a dense symmetric `A` of matching size.
    pub fn congruence(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.chol();
        l.transpose() * a * l
    }

    /// `L^T g`.
    pub fn transpose_mul(&self, g: &[f64]) -> Vec<f64> {
        let nb = self.nb();
        let mut out = Vec::with_capacity(g.len());
        out.extend(lower_transpose_mul(&self.b.l, &g[..nb]));
        out.extend(lower_transpose_mul(&self.c.l, &g[nb..]));
        out
    }

    /// Dense `K^-1`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = |blk: &FactoredBlock| {
            let n = blk.l.nrows();
            let mut out = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let z = lower_solve(&blk.l, &e);
                let x = upper_solve_transpose(&blk.l, &z);
                out.set_column(j, &DVector::from_vec(x));
            }
            out
        };
        block_diag(&inv(&self.b), &inv(&self.c))
    }
}

/// Assembles the `2T x 2T` prior for `eta`.
pub fn assemble_k(eta: &HyperParams, t: usize) -> Result<KernelMatrix> {
    KernelMatrix::with_sizes(eta, t, t)
}

/// `theta^T K^-1 theta`.
pub fn quad_form(k: &KernelMatrix, theta: &[f64]) -> Result<f64> {
    k.quad_form(theta)
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(na + nb, na + nb);
    out.view_mut((0, 0), (na, na)).copy_from(a);
    out.view_mut((na, na), (nb, nb)).copy_from(b);
    out
}

fn lower_solve(l: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut acc = rhs[i];
        for j in 0..i {
            acc -= l[(i, j)] * x[j];
        }
        x[i] = acc / l[(i, i)];
    }
    x
}

fn upper_solve_transpose(l: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for j in i + 1..n {
            acc -= l[(j, i)] * x[j];
        }
        x[i] = acc / l[(i, i)];
    }
    x
}

fn lower_mul(l: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    let n = z.len();
    (0..n)
        .map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum())
        .collect()
}

fn lower_transpose_mul(l: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| (i..n).map(|j| l[(j, i)] * g[j]).sum())
        .collect()
}
