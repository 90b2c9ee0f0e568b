//! End-to-end estimation: noise variance from a long ARX fit, kernel
//! hyperparameters by minimizing the Laplace evidence, then the final MAP
//! estimate.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::{check_sample_size, map_estimate, InnerSolveResult};
use crate::evidence::{laplace_nll, EvidenceConfig, EvidenceValue};
use crate::kernels::{HyperParams, KernelKind};
use crate::model::{lagged_cross, lagged_gram, Theta};
use crate::nelder_mead::{initial_simplex, minimize, NelderMeadConfig};
use crate::signals::{fir, Dataset};

/// Wall-clock source for stage timings. The core crate has no clock of its
/// own; [`NoClock`] reports zero everywhere.
pub trait Clock {
    /// Seconds since an arbitrary fixed origin.
    fn seconds(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigma2Estimate {
    pub sigma2: f64,
    pub rss: f64,
    /// Regressor Gram matrix was rank deficient and a ridge was added.
    pub ridge_fallback: bool,
}

/// Order 20 leaves visible bias when the noise filter has zeros close to the
/// unit circle; 100 is still cheap at N = 2000.
pub const DEFAULT_ARX_ORDER: usize = 100;

/// Least-squares ARX(`order`, `order`) fit; returns `RSS / (N - 2 order)`.
pub fn estimate_sigma2(data: &Dataset, order: usize) -> Result<Sigma2Estimate> {
    estimate_sigma2_with(data, order, true)
}

/// As [`estimate_sigma2`]; `dof_corrected = false` divides by `N` instead.
pub fn estimate_sigma2_with(data: &Dataset, order: usize, dof_corrected: bool) -> Result<Sigma2Estimate> {
    let n = data.len();
    if order == 0 {
        return Err(Error::InvalidParameter {
            name: "arx_order",
            value: 0.0,
        });
    }
    if n <= 4 * order {
        return Err(Error::TooFewSamples { n, required: 4 * order });
    }
    let (u, y) = (data.u(), data.y());
    let p = 2 * order;
    let mut g = DMatrix::zeros(p, p);
    g.view_mut((0, 0), (order, order)).copy_from(&lagged_gram(y, y, order, order));
    g.view_mut((order, order), (order, order)).copy_from(&lagged_gram(u, u, order, order));
    let yu = lagged_gram(y, u, order, order);
    g.view_mut((0, order), (order, order)).copy_from(&yu);
    g.view_mut((order, 0), (order, order)).copy_from(&yu.transpose());
    let mut rhs = lagged_cross(y, y, 1, order);
    rhs.extend(lagged_cross(y, u, 1, order));
    let rhs = DVector::from_vec(rhs);

    let max_diag = g.diagonal().max();
    let well_posed = |ch: &Cholesky<f64, nalgebra::Dyn>| {
        let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d * d));
        min_pivot > 1e-12 * max_diag
    };
    let (coef, ridge_fallback) = match Cholesky::new(g.clone()) {
        Some(ch) if max_diag > 0.0 && well_posed(&ch) => (ch.solve(&rhs), false),
        _ => {
            let ridge = 1e-8 * (g.trace() / p as f64).max(f64::MIN_POSITIVE);
            for i in 0..p {
                g[(i, i)] += ridge;
            }
            let ch = Cholesky::new(g).ok_or(Error::Singular("arx regressor"))?;
            (ch.solve(&rhs), true)
        }
    };

    let mut pa = vec![0.0; order + 1];
    let mut pf = vec![0.0; order + 1];
    pa[1..].copy_from_slice(&coef.as_slice()[..order]);
    pf[1..].copy_from_slice(&coef.as_slice()[order..]);
    let ya = fir(&pa, y);
    let uf = fir(&pf, u);
    let rss: f64 = y
        .iter()
        .zip(ya.iter().zip(&uf))
        .map(|(yt, (a, f))| {
            let e = yt - a - f;
            e * e
        })
        .sum();
    let denom = if dof_corrected { n - p } else { n };
    Ok(Sigma2Estimate {
        sigma2: rss / denom as f64,
        rss,
        ridge_fallback,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub nelder_mead: NelderMeadConfig,
    /// Starting hyperparameters; `None` uses [`HyperParams::initial`].
    pub start: Option<HyperParams>,
    pub evidence: EvidenceConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            nelder_mead: NelderMeadConfig::default(),
            start: None,
            evidence: EvidenceConfig::default(),
        }
    }
}

/// One evidence evaluation of the hyperparameter search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchStep {
    pub eta: HyperParams,
    /// `inf` when the evaluation failed.
    pub nll_relative: f64,
    pub best_so_far: f64,
    /// Gauss-Newton fallback or inner non-convergence.
    pub flagged: bool,
    pub inner_converged: bool,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaSearch {
    pub eta: HyperParams,
    pub evidence: EvidenceValue,
    pub trace: Vec<SearchStep>,
    pub converged: bool,
}

/// Minimizes the relative Laplace evidence over the feasible hyperparameter
/// set with Nelder-Mead in unconstrained coordinates. Each inner solve is
/// warm-started from the incumbent's MAP estimate.
pub fn optimize_eta(data: &Dataset, sigma2: f64, kind: KernelKind, t: usize, cfg: &SearchConfig) -> Result<EtaSearch> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "sigma2",
            value: sigma2,
        });
    }
    check_sample_size(data.len(), t, t)?;
    let start = cfg.start.unwrap_or_else(|| HyperParams::initial(kind));
    if start.kind != kind {
        return Err(Error::InvalidParameter {
            name: "start_kind",
            value: f64::NAN,
        });
    }
    start.validate()?;

    let mut trace: Vec<SearchStep> = Vec::new();
    let mut best: Option<(HyperParams, EvidenceValue)> = None;
    let mut best_value = f64::INFINITY;
    let x0 = start.to_search();
    let simplex = initial_simplex(&x0, cfg.nelder_mead.initial_step);
    let nm = minimize(
        |x| {
            let Ok(eta) = HyperParams::from_search(kind, x) else {
                return f64::INFINITY;
            };
            let warm = best.as_ref().map(|(_, ev)| &ev.theta_tilde);
            let (value, flagged, inner_converged, failed) = match laplace_nll(&eta, t, data, sigma2, warm, &cfg.evidence) {
                Ok(ev) => {
                    let v = ev.nll_relative;
                    let (flagged, converged) = (ev.flagged(), ev.inner_converged);
                    if v < best_value {
                        best_value = v;
                        best = Some((eta, ev));
                    }
                    (v, flagged, converged, false)
                }
                Err(_) => (f64::INFINITY, true, false, true),
            };
            trace.push(SearchStep {
                eta,
                nll_relative: value,
                best_so_far: best_value,
                flagged,
                inner_converged,
                failed,
            });
            value
        },
        simplex,
        &cfg.nelder_mead,
    );

    // a Gauss-Newton fallback alone is informational
    if !trace.iter().any(|s| s.inner_converged) {
        return Err(Error::SearchFailed {
            evaluations: trace.len(),
            trace: trace.iter().map(|s| s.nll_relative).collect(),
        });
    }
    let (eta, evidence) = best.ok_or(Error::SearchFailed {
        evaluations: trace.len(),
        trace: trace.iter().map(|s| s.nll_relative).collect(),
    })?;
    Ok(EtaSearch {
        eta,
        evidence,
        trace,
        converged: nm.converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Taps per impulse response.
    pub t: usize,
    pub arx_order: usize,
    /// Divide the ARX residual sum of squares by `N - 2 n` rather than `N`.
    pub dof_corrected: bool,
    /// Supplied noise variance; skips the ARX stage.
    pub sigma2: Option<f64>,
    pub search: SearchConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            t: 50,
            arx_order: DEFAULT_ARX_ORDER,
            dof_corrected: true,
            sigma2: None,
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub sigma2: f64,
    pub search: f64,
    pub final_solve: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.sigma2 + self.search + self.final_solve
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub eta_hat: HyperParams,
    pub sigma2_hat: f64,
    /// `None` when the noise variance was supplied.
    pub sigma2_estimate: Option<Sigma2Estimate>,
    pub evidence: EvidenceValue,
    pub final_solve: InnerSolveResult,
    pub search_trace: Vec<SearchStep>,
    pub search_converged: bool,
    pub timings: StageTimings,
}

pub fn fit(data: &Dataset, kind: KernelKind, cfg: &FitConfig) -> Result<FitResult> {
    fit_with_clock(data, kind, cfg, &NoClock)
}

pub fn fit_with_clock(data: &Dataset, kind: KernelKind, cfg: &FitConfig, clock: &dyn Clock) -> Result<FitResult> {
    check_sample_size(data.len(), cfg.t, cfg.t)?;
    let t0 = clock.seconds();
    let (sigma2_hat, sigma2_estimate) = match cfg.sigma2 {
        Some(s) if s > 0.0 && s.is_finite() => (s, None),
        Some(s) => {
            return Err(Error::InvalidParameter {
                name: "sigma2",
                value: s,
            }
            .in_stage("noise variance"))
        }
        None => {
            let est = estimate_sigma2_with(data, cfg.arx_order, cfg.dof_corrected)
                .map_err(|e| e.in_stage("noise variance"))?;
            if !(est.sigma2 > 0.0) {
                return Err(Error::ZeroVariance("ARX residual").in_stage("noise variance"));
            }
            (est.sigma2, Some(est))
        }
    };
    let t1 = clock.seconds();
    let search = optimize_eta(data, sigma2_hat, kind, cfg.t, &cfg.search).map_err(|e| e.in_stage("hyperparameter search"))?;
    let t2 = clock.seconds();
    let final_solve = map_estimate(
        data,
        &search.eta,
        cfg.t,
        sigma2_hat,
        Some(&search.evidence.theta_tilde),
        &cfg.search.evidence.inner,
    )
    .map_err(|e| e.in_stage("final estimate"))?;
    let t3 = clock.seconds();
    Ok(FitResult {
        theta_hat: final_solve.theta.clone(),
        eta_hat: search.eta,
        sigma2_hat,
        sigma2_estimate,
        evidence: search.evidence,
        final_solve,
        search_trace: search.trace,
        search_converged: search.converged,
        timings: StageTimings {
            sigma2: t1 - t0,
            search: t2 - t1,
            final_solve: t3 - t2,
        },
    })
}
