//! MAP estimation of `theta` for fixed hyperparameters and noise variance.
//!
//! Minimizes `J(theta) = V_N(theta) + (sigma2 / N) theta^T K^-1 theta` over
//! parameters whose `C` polynomial is stable. Steps are Levenberg-Marquardt
//! on the Gauss-Newton system, taken in prior-whitened coordinates
//! `theta = L z` (`K = L L^T`) so that extreme kernel scales stay well
//! conditioned.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{HyperParams, KernelMatrix};
use crate::model::{
    c_stable, lagged_cross, lagged_gram, mean_square, reflect_unstable_roots, residual_recursion,
    Sensitivities, Theta, DEFAULT_STABILITY_MARGIN,
};
use crate::signals::{gaussian_vec, Dataset};

const HALVINGS: usize = 30;
const MAX_DAMPING: f64 = 1e20;
/// Relative size of a predicted objective decrease that counts as zero.
const NEGLIGIBLE_DECREASE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolveConfig {
    pub max_iters: usize,
    /// Tolerance on the whitened gradient infinity norm, relative to `max(1, |J|)`.
    pub grad_tol: f64,
    pub step_tol: f64,
    pub lm_damping_init: f64,
    pub stability_margin: f64,
    /// Extra starts with `c` perturbed by Gaussian draws.
    pub multi_starts: usize,
    pub multi_start_scale: f64,
    pub multi_start_seed: u64,
}

impl Default for InnerSolveConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            lm_damping_init: 1e-3,
            stability_margin: DEFAULT_STABILITY_MARGIN,
            multi_starts: 0,
            multi_start_scale: 0.05,
            multi_start_seed: 0,
        }
    }
}

impl InnerSolveConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("grad_tol", self.grad_tol),
            ("step_tol", self.step_tol),
            ("lm_damping_init", self.lm_damping_init),
        ];
        for (name, value) in checks {
            if !(value > 0.0) {
                return Err(Error::InvalidParameter { name, value });
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iters",
                value: 0.0,
            });
        }
        if !(self.stability_margin > 0.0 && self.stability_margin < 1.0) {
            return Err(Error::InvalidParameter {
                name: "stability_margin",
                value: self.stability_margin,
            });
        }
        Ok(())
    }
}

/// Why the inner solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTol,
    StepTol,
    /// The Gauss-Newton model predicts a decrease below the rounding
    /// level of the objective.
    NegligibleDecrease,
    /// No damping level produced a decrease.
    Stalled,
    MaxIterations,
}

impl Termination {
    pub fn is_success(self) -> bool {
        matches!(
            self,
            Termination::GradientTol | Termination::StepTol | Termination::NegligibleDecrease
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolveResult {
    pub theta: Theta,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub final_gradient_norm: f64,
    /// Objective at every accepted iterate, starting point included.
    pub objective_trace: Vec<f64>,
}

/// Gaussian prior on `theta`, or none at all (plain PEM).
#[derive(Debug, Clone, Copy)]
pub enum Prior<'a> {
    Kernel(&'a KernelMatrix),
    Flat { nb: usize, nc: usize },
}

impl Prior<'_> {
    pub fn nb(&self) -> usize {
        match self {
            Prior::Kernel(k) => k.nb(),
            Prior::Flat { nb, .. } => *nb,
        }
    }

    pub fn nc(&self) -> usize {
        match self {
            Prior::Kernel(k) => k.nc(),
            Prior::Flat { nc, .. } => *nc,
        }
    }

    fn whiten(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Prior::Kernel(k) => k.whiten(theta).expect("dimension checked"),
            Prior::Flat { .. } => theta.to_vec(),
        }
    }

    fn color(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Prior::Kernel(k) => k.color(z),
            Prior::Flat { .. } => z.to_vec(),
        }
    }

    fn transpose_mul(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Prior::Kernel(k) => k.transpose_mul(g),
            Prior::Flat { .. } => g.to_vec(),
        }
    }

    fn congruence(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Prior::Kernel(k) => k.congruence(a),
            Prior::Flat { .. } => a.clone(),
        }
    }

    fn has_penalty(&self) -> bool {
        matches!(self, Prior::Kernel(_))
    }

    fn check(&self, theta: &Theta) -> Result<()> {
        if theta.nb() != self.nb() {
            return Err(Error::LengthMismatch {
                expected: self.nb(),
                found: theta.nb(),
            });
        }
        if theta.nc() != self.nc() {
            return Err(Error::LengthMismatch {
                expected: self.nc(),
                found: theta.nc(),
            });
        }
        Ok(())
    }
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

pub(crate) fn check_sample_size(n: usize, nb: usize, nc: usize) -> Result<()> {
    let required = 4 * nb.max(nc);
    if n > required {
        Ok(())
    } else {
        Err(Error::TooFewSamples { n, required })
    }
}

/// `J(theta) = V_N + (sigma2/N) theta^T K^-1 theta`.
pub fn objective_j(theta: &Theta, prior: Prior<'_>, data: &Dataset, sigma2: f64) -> Result<f64> {
    prior.check(theta)?;
    let eps = residual_recursion(theta.b(), theta.c(), data.u(), data.y());
    let penalty = if prior.has_penalty() {
        prior.whiten(&theta.stacked()).iter().map(|v| v * v).sum()
    } else {
        0.0
    };
    Ok(mean_square(&eps) + sigma2 / data.len() as f64 * penalty)
}

/// `h(theta, eta) = V_N / (2 sigma2) + ||theta||^2_{K^-1} / (2N) + log|K| / (2N)`.
pub fn objective_h(theta: &Theta, eta: &HyperParams, data: &Dataset, sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    let k = KernelMatrix::with_sizes(eta, theta.nb(), theta.nc())?;
    if !c_stable(theta.c(), DEFAULT_STABILITY_MARGIN) {
        return Err(Error::Unstable {
            max_modulus: crate::model::root_moduli(theta.c()).into_iter().fold(0.0, f64::max),
        });
    }
    Ok(objective_h_with(theta, &k, data, sigma2))
}

pub(crate) fn objective_h_with(theta: &Theta, k: &KernelMatrix, data: &Dataset, sigma2: f64) -> f64 {
    let n = data.len() as f64;
    let eps = residual_recursion(theta.b(), theta.c(), data.u(), data.y());
    let quad = k.quad_form(&theta.stacked()).expect("dimension checked");
    mean_square(&eps) / (2.0 * sigma2) + quad / (2.0 * n) + k.logdet() / (2.0 * n)
}

/// Starting point: FIR ridge estimate of `b` (the `c = 0` problem is linear),
/// `c = 0`.
pub fn initialize_theta(data: &Dataset, prior: Prior<'_>, sigma2: f64) -> Theta {
    let (nb, nc) = (prior.nb(), prior.nc());
    if nb == 0 {
        return Theta::zeros(0, nc);
    }
    let gram = lagged_gram(data.u(), data.u(), nb, nb);
    let rhs = DVector::from_vec(lagged_cross(data.y(), data.u(), 1, nb));
    let b = match prior {
        Prior::Kernel(k) => {
            let l = k.b_factor();
            let mut a = l.transpose() * &gram * l;
            for i in 0..nb {
                a[(i, i)] += sigma2;
            }
            let w = solve_spd(a, &(l.transpose() * &rhs));
            (l * w).iter().copied().collect::<Vec<_>>()
        }
        Prior::Flat { .. } => {
            let mut a = gram;
            let ridge = 1e-10 * (1.0 + a.trace() / nb as f64);
            for i in 0..nb {
                a[(i, i)] += ridge;
            }
            solve_spd(a, &rhs).iter().copied().collect()
        }
    };
    Theta::new(b, vec![0.0; nc]).unwrap_or_else(|_| Theta::zeros(nb, nc))
}

fn solve_spd(mut a: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut bump = 0.0;
    loop {
        if let Some(ch) = Cholesky::new(a.clone()) {
            return ch.solve(rhs);
        }
        bump = if bump == 0.0 {
            1e-12 * (1.0 + a.diagonal().amax())
        } else {
            bump * 10.0
        };
        for i in 0..n {
            a[(i, i)] += bump;
        }
    }
}

/// MAP estimate for kernel hyperparameters `eta` and `t` taps per response.
pub fn map_estimate(
    data: &Dataset,
    eta: &HyperParams,
    t: usize,
    sigma2: f64,
    init: Option<&Theta>,
    cfg: &InnerSolveConfig,
) -> Result<InnerSolveResult> {
    let k = KernelMatrix::with_sizes(eta, t, t)?;
    map_estimate_with_prior(data, Prior::Kernel(&k), sigma2, init, cfg)
}

/// MAP (or, with a flat prior, plain PEM) estimate.
pub fn map_estimate_with_prior(
    data: &Dataset,
    prior: Prior<'_>,
    sigma2: f64,
    init: Option<&Theta>,
    cfg: &InnerSolveConfig,
) -> Result<InnerSolveResult> {
    check_sigma2(sigma2)?;
    cfg.validate()?;
    check_sample_size(data.len(), prior.nb(), prior.nc())?;

    let start = match init {
        Some(theta) => {
            prior.check(theta)?;
            sanitize(theta, cfg.stability_margin)
        }
        None => initialize_theta(data, prior, sigma2),
    };
    let mut best = levenberg_marquardt(data, prior, sigma2, start.clone(), cfg)?;
    if cfg.multi_starts > 0 && prior.nc() > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.multi_start_seed);
        for _ in 0..cfg.multi_starts {
            let mut c = start.c().to_vec();
            for (ci, d) in c
                .iter_mut()
                .zip(gaussian_vec(&mut rng, prior.nc(), cfg.multi_start_scale))
            {
                *ci += d;
            }
            let perturbed = sanitize(&Theta::new(start.b().to_vec(), c)?, cfg.stability_margin);
            if let Ok(candidate) = levenberg_marquardt(data, prior, sigma2, perturbed, cfg) {
                if candidate.objective < best.objective {
                    best = candidate;
                }
            }
        }
    }
    Ok(best)
}

fn sanitize(theta: &Theta, margin: f64) -> Theta {
    if c_stable(theta.c(), margin) {
        return theta.clone();
    }
    let c = reflect_unstable_roots(theta.c(), margin);
    let c = if c_stable(&c, margin) {
        c
    } else {
        vec![0.0; theta.nc()]
    };
    Theta::new(theta.b().to_vec(), c).unwrap_or_else(|_| Theta::zeros(theta.nb(), theta.nc()))
}

struct Iterate {
    theta: Theta,
    z: Vec<f64>,
    objective: f64,
    sens: Sensitivities,
}

impl Iterate {
    fn new(theta: Theta, prior: Prior<'_>, data: &Dataset, sigma2: f64) -> Self {
        let z = prior.whiten(&theta.stacked());
        let sens = Sensitivities::new(&theta, data);
        let penalty: f64 = if prior.has_penalty() {
            z.iter().map(|v| v * v).sum()
        } else {
            0.0
        };
        let objective = mean_square(&sens.eps) + sigma2 / data.len() as f64 * penalty;
        Self {
            theta,
            z,
            objective,
            sens,
        }
    }

    /// Gradient of `J` in whitened coordinates.
    fn scaled_gradient(&self, prior: Prior<'_>, n: f64, sigma2: f64) -> Vec<f64> {
        let g = prior.transpose_mul(&self.sens.gradient());
        g.iter()
            .zip(&self.z)
            .map(|(gi, zi)| {
                let data_term = 2.0 / n * gi;
                if prior.has_penalty() {
                    data_term + 2.0 * sigma2 / n * zi
                } else {
                    data_term
                }
            })
            .collect()
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn levenberg_marquardt(
    data: &Dataset,
    prior: Prior<'_>,
    sigma2: f64,
    start: Theta,
    cfg: &InnerSolveConfig,
) -> Result<InnerSolveResult> {
    let n = data.len() as f64;
    let dim = prior.nb() + prior.nc();
    let margin = cfg.stability_margin;
    if !c_stable(start.c(), margin) {
        return Err(Error::NoStableStep);
    }

    let mut cur = Iterate::new(start, prior, data, sigma2);
    let mut trace = vec![cur.objective];
    let mut mu = f64::NAN;
    let mut iterations = 0;
    let mut grad = cur.scaled_gradient(prior, n, sigma2);
    let mut termination = Termination::MaxIterations;

    while iterations < cfg.max_iters {
        if inf_norm(&grad) <= cfg.grad_tol * cur.objective.abs().max(1.0) {
            termination = Termination::GradientTol;
            break;
        }
        iterations += 1;

        let mut a = prior.congruence(&cur.sens.gram()) * (2.0 / n);
        if prior.has_penalty() {
            for i in 0..dim {
                a[(i, i)] += 2.0 * sigma2 / n;
            }
        }
        if mu.is_nan() {
            // relative to the weakest curvature direction (2 sigma2 / N after whitening)
            let d = a.diagonal();
            mu = cfg.lm_damping_init * d.min().max(1e-12 * d.max()).max(f64::MIN_POSITIVE);
        }
        let neg_grad = DVector::from_iterator(dim, grad.iter().map(|g| -g));

        // Gauss-Newton predicted decrease; below the rounding level of J no
        // step can be verified, so the iterate is as good as it gets.
        if let Some(ch) = Cholesky::new(&a + DMatrix::identity(dim, dim) * (1e-14 * a.diagonal().max())) {
            let predicted = 0.5 * neg_grad.dot(&ch.solve(&neg_grad));
            if predicted <= NEGLIGIBLE_DECREASE * cur.objective.abs().max(f64::MIN_POSITIVE) {
                termination = Termination::NegligibleDecrease;
                iterations -= 1;
                break;
            }
        }

        let mut accepted = None;
        let mut last_unstable = false;
        while mu <= MAX_DAMPING {
            let mut damped = a.clone();
            for i in 0..dim {
                damped[(i, i)] += mu;
            }
            let Some(ch) = Cholesky::new(damped) else {
                mu *= 2.0;
                continue;
            };
            let dz = ch.solve(&neg_grad);
            let dtheta = prior.color(dz.as_slice());
            let base = cur.theta.stacked();

            let mut scale = 1.0;
            let mut trial = None;
            for _ in 0..=HALVINGS {
                let cand: Vec<f64> = base
                    .iter()
                    .zip(&dtheta)
                    .map(|(t, d)| t + scale * d)
                    .collect();
                if c_stable(&cand[prior.nb()..], margin) {
                    trial = Some(cand);
                    break;
                }
                scale *= 0.5;
            }
            let Some(cand) = trial else {
                last_unstable = true;
                mu *= 2.0;
                continue;
            };
            last_unstable = false;
            // a step shortened by the stability guard says nothing about convergence
            let step = if scale == 1.0 { inf_norm(&dtheta) } else { f64::INFINITY };
            let theta = Theta::from_stacked(&cand, prior.nb())?;
            let next = Iterate::new(theta, prior, data, sigma2);
            if next.objective < cur.objective {
                mu /= 3.0;
                accepted = Some((next, step));
                break;
            }
            mu *= 2.0;
        }

        match accepted {
            Some((next, step)) => {
                let small_step = step <= cfg.step_tol * (1.0 + inf_norm(&cur.theta.stacked()));
                cur = next;
                trace.push(cur.objective);
                grad = cur.scaled_gradient(prior, n, sigma2);
                if small_step {
                    termination = Termination::StepTol;
                    break;
                }
            }
            None => {
                if last_unstable {
                    return Err(Error::NoStableStep);
                }
                termination = Termination::Stalled;
                break;
            }
        }
    }

    let gnorm = inf_norm(&grad);
    if termination == Termination::MaxIterations && gnorm <= cfg.grad_tol * cur.objective.abs().max(1.0) {
        termination = Termination::GradientTol;
    }
    Ok(InnerSolveResult {
        objective: cur.objective,
        theta: cur.theta,
        iterations,
        converged: termination.is_success(),
        termination,
        final_gradient_norm: gnorm,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::tc_kernel;
    use crate::model::{simulate_theta, v_n};
    use rand::Rng;

    fn stable_c(rng: &mut ChaCha8Rng, nc: usize) -> Vec<f64> {
        loop {
            let c = gaussian_vec(rng, nc, 0.3);
            if c_stable(&c, 0.9) {
                return c;
            }
        }
    }

    fn max_data(rng: &mut ChaCha8Rng, theta: &Theta, n: usize, noise: f64) -> Dataset {
        let u = gaussian_vec(rng, n, 1.0);
        let e = gaussian_vec(rng, n, noise);
        let y = simulate_theta(theta, &u, &e).unwrap();
        Dataset::from_vecs(u, y).unwrap()
    }

    fn decaying_theta(rng: &mut ChaCha8Rng, t: usize) -> Theta {
        let b: Vec<f64> = (0..t)
            .map(|k| 0.8f64.powi(k as i32) * rng.random_range(-1.0..1.0))
            .collect();
        let mut c = vec![0.0; t];
        c[0] = rng.random_range(-0.5..0.5);
        if t > 1 {
            c[1] = rng.random_range(-0.2..0.2);
        }
        Theta::new(b, c).unwrap()
    }

    fn air_single(x: &[f64], xh: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let num: f64 = x.iter().zip(xh).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = x.iter().map(|a| (a - m) * (a - m)).sum();
        100.0 * (1.0 - num / den)
    }

    /// `(Phi^T Phi + sigma2 K^-1)^-1 Phi^T y` with an explicit regressor.
    fn ridge_oracle(data: &Dataset, kb: &DMatrix<f64>, sigma2: f64) -> Vec<f64> {
        let nb = kb.nrows();
        let n = data.len();
        let phi = DMatrix::from_fn(n, nb, |i, j| if i >= j + 1 { data.u()[i - 1 - j] } else { 0.0 });
        let y = DVector::from_column_slice(data.y());
        let kinv = kb.clone().try_inverse().unwrap();
        let lhs = phi.transpose() * &phi + kinv * sigma2;
        let rhs = phi.transpose() * y;
        lhs.lu().solve(&rhs).unwrap().iter().copied().collect()
    }

    #[test]
    fn fir_problem_reduces_to_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for trial in 0..10 {
            let t = 8;
            let theta = Theta::new(decaying_theta(&mut rng, t).b().to_vec(), vec![]).unwrap();
            let data = max_data(&mut rng, &theta, 300, 0.3);
            let beta = rng.random_range(0.5..0.95);
            let lambda = rng.random_range(0.1..5.0);
            let sigma2 = rng.random_range(0.05..1.0);
            let eta = HyperParams::tc(lambda, 1.0, beta, 0.5);
            let k = KernelMatrix::with_sizes(&eta, t, 0).unwrap();
            let res =
                map_estimate_with_prior(&data, Prior::Kernel(&k), sigma2, None, &InnerSolveConfig::default())
                    .unwrap();
            let oracle = ridge_oracle(&data, &(tc_kernel(beta, t).unwrap() * lambda), sigma2);
            let norm: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff: f64 = res
                .theta
                .b()
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(diff <= 1e-8 * norm, "trial {trial}: {diff} vs {norm}");
        }
    }

    #[test]
    fn tiny_prior_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let y = gaussian_vec(&mut rng, 400, 1.0);
        let data = Dataset::from_vecs(vec![0.0; 400], y).unwrap();
        let eta = HyperParams::tc(1e-6, 1e-6, 0.8, 0.8);
        let res = map_estimate(&data, &eta, 10, 1.0, None, &InnerSolveConfig::default()).unwrap();
        let norm: f64 = res.theta.stacked().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-2, "norm {norm}");
    }

    #[test]
    fn recovers_simulated_max_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = 10;
        let truth = decaying_theta(&mut rng, t);
        let data = max_data(&mut rng, &truth, 5000, 0.1);
        let eta = HyperParams::tc(1.0, 1.0, 0.8, 0.6);
        let res = map_estimate(&data, &eta, t, 0.01, None, &InnerSolveConfig::default()).unwrap();
        assert!(res.converged);
        let air = 0.5 * (air_single(truth.b(), res.theta.b()) + air_single(truth.c(), res.theta.c()));
        assert!(air >= 90.0, "AIR {air}");
    }

    #[test]
    fn objective_h_identities() {
        // theta = 0, one sample with y = 1
        let data = Dataset::from_vecs(vec![0.0], vec![1.0]).unwrap();
        let eta = HyperParams::tc(1.0, 2.0, 0.5, 0.7);
        let k = KernelMatrix::with_sizes(&eta, 2, 2).unwrap();
        let sigma2 = 0.7;
        let h = objective_h(&Theta::zeros(2, 2), &eta, &data, sigma2).unwrap();
        assert!((h - (1.0 / (2.0 * sigma2) + 0.5 * k.logdet())).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let theta = Theta::new(gaussian_vec(&mut rng, 4, 0.5), stable_c(&mut rng, 4)).unwrap();
        let data = max_data(&mut rng, &theta, 100, 0.5);
        let eta = HyperParams::dc2(0.5, 2.0, 0.7, 0.8, 0.3, 0.6);
        let k = KernelMatrix::with_sizes(&eta, 4, 4).unwrap();
        let h = objective_h(&theta, &eta, &data, sigma2).unwrap();
        let n = 100.0;
        let full = n / (2.0 * sigma2) * v_n(&theta, &data).unwrap()
            + 0.5 * k.quad_form(&theta.stacked()).unwrap()
            + 0.5 * k.logdet();
        assert!((n * h - full).abs() <= 1e-12 * full.abs());
    }

    #[test]
    fn minimizers_of_h_and_j_coincide() {
        // h = J N / (2 sigma2) + const; minimize h directly with a
        // finite-difference Newton method and compare.
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let theta = decaying_theta(&mut rng, 3);
        let data = max_data(&mut rng, &theta, 400, 0.5);
        let eta = HyperParams::tc(1.0, 0.5, 0.7, 0.6);
        let sigma2 = 0.25;
        let res = map_estimate(&data, &eta, 3, sigma2, None, &InnerSolveConfig::default()).unwrap();

        // Newton iterations on h with finite-difference derivatives.
        let h = |p: &[f64]| {
            objective_h(&Theta::from_stacked(p, 3).unwrap(), &eta, &data, sigma2).unwrap()
        };
        let mut p = initialize_theta(
            &data,
            Prior::Kernel(&KernelMatrix::with_sizes(&eta, 3, 3).unwrap()),
            sigma2,
        )
        .stacked();
        let d = 1e-4;
        for _ in 0..30 {
            let mut g = DVector::zeros(6);
            let mut hess = DMatrix::zeros(6, 6);
            for i in 0..6 {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[i] += d;
                pm[i] -= d;
                g[i] = (h(&pp) - h(&pm)) / (2.0 * d);
                for j in 0..6 {
                    let mut a = p.clone();
                    let mut b = p.clone();
                    let mut c = p.clone();
                    let mut e = p.clone();
                    a[i] += d;
                    a[j] += d;
                    b[i] += d;
                    b[j] -= d;
                    c[i] -= d;
                    c[j] += d;
                    e[i] -= d;
                    e[j] -= d;
                    hess[(i, j)] = (h(&a) - h(&b) - h(&c) + h(&e)) / (4.0 * d * d);
                }
            }
            let step = hess.lu().solve(&g).unwrap();
            for i in 0..6 {
                p[i] -= step[i];
            }
        }
        for (a, b) in p.iter().zip(res.theta.stacked()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn initializer_examples() {
        let data = Dataset::from_vecs(vec![0.0; 50], (0..50).map(|i| (i as f64).sin()).collect()).unwrap();
        let k = KernelMatrix::with_sizes(&HyperParams::tc(1.0, 1.0, 0.8, 0.8), 5, 5).unwrap();
        let th = initialize_theta(&data, Prior::Kernel(&k), 1.0);
        assert!(th.stacked().iter().all(|v| *v == 0.0));
        let th = initialize_theta(&data, Prior::Flat { nb: 5, nc: 5 }, 1.0);
        assert!(th.stacked().iter().all(|v| *v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let truth = Theta::new(decaying_theta(&mut rng, 10).b().to_vec(), vec![0.0; 10]).unwrap();
        let data = max_data(&mut rng, &truth, 4000, 0.3);
        let eta = HyperParams::tc(1.0, 0.01, 0.8, 0.5);
        let k = KernelMatrix::with_sizes(&eta, 10, 10).unwrap();
        let start = initialize_theta(&data, Prior::Kernel(&k), 0.09);
        assert!(c_stable(start.c(), DEFAULT_STABILITY_MARGIN));
        let res = map_estimate(&data, &eta, 10, 0.09, None, &InnerSolveConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 5, "iterations {} {:?} {}", res.iterations, res.objective_trace, res.final_gradient_norm);
    }

    #[test]
    fn accepted_objectives_never_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for _ in 0..5 {
            let truth = decaying_theta(&mut rng, 6);
            let data = max_data(&mut rng, &truth, 600, 0.5);
            let eta = HyperParams::tc(0.5, 0.5, 0.7, 0.7);
            let res = map_estimate(&data, &eta, 6, 0.25, None, &InnerSolveConfig::default()).unwrap();
            assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(c_stable(res.theta.c(), DEFAULT_STABILITY_MARGIN));
        }
    }

    #[test]
    fn gradient_matches_finite_differences_of_j() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..10 {
            let truth = decaying_theta(&mut rng, 4);
            let data = max_data(&mut rng, &truth, 200, 0.5);
            let eta = HyperParams::tc(0.8, 0.3, 0.6, 0.7);
            let k = KernelMatrix::with_sizes(&eta, 4, 4).unwrap();
            let prior = Prior::Kernel(&k);
            let probe = Theta::new(gaussian_vec(&mut rng, 4, 0.3), stable_c(&mut rng, 4)).unwrap();
            let sigma2 = 0.3;
            let n = 200.0;
            let it = Iterate::new(probe.clone(), prior, &data, sigma2);
            // back to theta coordinates: grad_theta = L^-T grad_z
            let sg = it.scaled_gradient(prior, n, sigma2);
            let kinv = k.inverse();
            let l = k.chol();
            let g_theta = &kinv * &l * DVector::from_vec(sg);
            let p = probe.stacked();
            let h = 1e-6;
            for i in 0..8 {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[i] += h;
                pm[i] -= h;
                let jp = objective_j(&Theta::from_stacked(&pp, 4).unwrap(), prior, &data, sigma2).unwrap();
                let jm = objective_j(&Theta::from_stacked(&pm, 4).unwrap(), prior, &data, sigma2).unwrap();
                let fd = (jp - jm) / (2.0 * h);
                assert!((fd - g_theta[i]).abs() <= 1e-6 * g_theta.amax().max(1e-3), "{fd} vs {}", g_theta[i]);
            }
        }
    }

    #[test]
    fn scaling_sigma2_and_kernel_together_keeps_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let truth = decaying_theta(&mut rng, 5);
        let data = max_data(&mut rng, &truth, 500, 0.4);
        let cfg = InnerSolveConfig::default();
        let a = map_estimate(&data, &HyperParams::tc(0.7, 0.2, 0.75, 0.6), 5, 0.16, None, &cfg).unwrap();
        let b = map_estimate(&data, &HyperParams::tc(2.1, 0.6, 0.75, 0.6), 5, 0.48, None, &cfg).unwrap();
        for (x, y) in a.theta.stacked().iter().zip(b.theta.stacked()) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = Dataset::from_vecs(vec![0.0; 20], vec![0.0; 20]).unwrap();
        let eta = HyperParams::tc(1.0, 1.0, 0.5, 0.5);
        let cfg = InnerSolveConfig::default();
        assert!(matches!(
            map_estimate(&data, &eta, 5, 1.0, None, &cfg),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(map_estimate(&data, &eta, 2, 0.0, None, &cfg).is_err());
        let wrong = Theta::zeros(3, 2);
        assert!(map_estimate(&data, &eta, 2, 1.0, Some(&wrong), &cfg).is_err());
    }

    #[test]
    fn unstable_initial_point_is_reflected() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let truth = decaying_theta(&mut rng, 3);
        let data = max_data(&mut rng, &truth, 300, 0.5);
        let init = Theta::new(vec![0.0; 3], vec![-1.8, 0.5, 0.0]).unwrap();
        let res = map_estimate(
            &data,
            &HyperParams::tc(1.0, 1.0, 0.7, 0.7),
            3,
            0.25,
            Some(&init),
            &InnerSolveConfig::default(),
        )
        .unwrap();
        assert!(c_stable(res.theta.c(), DEFAULT_STABILITY_MARGIN));
    }

    #[test]
    fn multi_start_never_worse_than_single_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let truth = decaying_theta(&mut rng, 4);
        let data = max_data(&mut rng, &truth, 400, 0.5);
        let eta = HyperParams::tc(1.0, 1.0, 0.7, 0.7);
        let single = map_estimate(&data, &eta, 4, 0.25, None, &InnerSolveConfig::default()).unwrap();
        let cfg = InnerSolveConfig {
            multi_starts: 4,
            multi_start_seed: 3,
            ..InnerSolveConfig::default()
        };
        let multi = map_estimate(&data, &eta, 4, 0.25, None, &cfg).unwrap();
        assert!(multi.objective <= single.objective);
    }

    #[test]
    fn flat_prior_is_plain_pem() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let truth = Theta::new(vec![1.0, 0.5], vec![0.6]).unwrap();
        let data = max_data(&mut rng, &truth, 3000, 0.2);
        let res = map_estimate_with_prior(
            &data,
            Prior::Flat { nb: 2, nc: 1 },
            1.0,
            None,
            &InnerSolveConfig::default(),
        )
        .unwrap();
        assert!(res.converged);
        for (a, b) in res.theta.stacked().iter().zip(truth.stacked()) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }
}
