//! Monte Carlo comparison harness: random stable systems, SNR-calibrated
//! datasets, fit metrics, low-order PEM baselines and per-run drivers.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

// inherent float methods shadow this whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{Complex, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{map_estimate_with_prior, InnerSolveConfig, Prior};
use crate::kernels::{tc_kernel, KernelKind};
use crate::model::{
    c_stable, impulse_response, poly_from_roots, predict, root_moduli, Theta, DEFAULT_STABILITY_MARGIN,
};
use crate::pipeline::{fit_with_clock, Clock, FitConfig, DEFAULT_ARX_ORDER};
use crate::signals::{fir, gaussian_vec, inverse_monic, square_wave, variance, Dataset, TimeSeries};

const MAX_ATTEMPTS: usize = 100;
/// Last retained tap relative to the peak tap; larger tails are resampled
/// whenever `T` is long enough for the slowest admissible pole to decay
/// that far.
pub const TAIL_RATIO: f64 = 1e-2;

/// Truncated impulse responses of a random system plus how they were made.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueSystem {
    /// `b_0 .. b_{T-1}`, unit Euclidean norm.
    pub b_true: Vec<f64>,
    /// `c_1 .. c_T`; the leading `c_0 = 1` is implicit.
    pub c_true: Vec<f64>,
    pub b_poles: Vec<Complex<f64>>,
    pub b_zeros: Vec<Complex<f64>>,
    pub c_poles: Vec<Complex<f64>>,
    pub c_zeros: Vec<Complex<f64>>,
    pub seed: u64,
    pub attempts: usize,
}

impl TrueSystem {
    pub fn theta(&self) -> Theta {
        Theta::new(self.b_true.clone(), self.c_true.clone()).expect("finite taps")
    }
}

fn modulus(z: &Complex<f64>) -> f64 {
    z.re.hypot(z.im)
}

/// `count` roots as conjugate pairs and reals, moduli uniform in `[lo, hi]`.
fn sample_roots(rng: &mut ChaCha8Rng, count: usize, lo: f64, hi: f64) -> Vec<Complex<f64>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let r = rng.random_range(lo..=hi);
        if count - out.len() >= 2 && rng.random_bool(0.5) {
            let phi = rng.random_range(0.0..PI);
            let z = Complex::new(r * phi.cos(), r * phi.sin());
            out.push(z);
            out.push(z.conj());
        } else {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            out.push(Complex::new(sign * r, 0.0));
        }
    }
    out
}

fn sample_poles(rng: &mut ChaCha8Rng, count: usize, pole_range: (f64, f64)) -> Vec<Complex<f64>> {
    let mut poles = sample_roots(rng, count, 0.3, pole_range.1);
    let current = poles.iter().map(modulus).fold(0.0, f64::max);
    let target = rng.random_range(pole_range.0..=pole_range.1);
    for p in poles.iter_mut() {
        *p *= target / current;
    }
    poles
}

fn monic(roots: &[Complex<f64>]) -> Vec<f64> {
    let mut p = vec![1.0];
    p.extend(poly_from_roots(roots));
    p
}

fn decayed(taps: &[f64]) -> bool {
    let peak = taps.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    taps.last().is_some_and(|v| v.abs() <= TAIL_RATIO * peak)
}

/// Random stable system of the given order with truncated taps of length `t`.
pub fn random_system(order: usize, pole_range: (f64, f64), t: usize, seed: u64) -> Result<TrueSystem> {
    if order < 2 {
        return Err(Error::InvalidParameter {
            name: "order",
            value: order as f64,
        });
    }
    let (lo, hi) = pole_range;
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(Error::InvalidParameter {
            name: "pole_range",
            value: hi,
        });
    }
    if t == 0 {
        return Err(Error::InvalidParameter { name: "T", value: 0.0 });
    }
    let check_tail = hi.powi(t as i32 - 1) <= TAIL_RATIO;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=MAX_ATTEMPTS {
        let b_poles = sample_poles(&mut rng, order, pole_range);
        let b_zeros = sample_roots(&mut rng, order - 1, 0.2, 1.2);
        let b_raw = impulse_response(&monic(&b_zeros), &monic(&b_poles), t)?;
        let norm = b_raw.iter().map(|v| v * v).sum::<f64>().sqrt();

        let c_poles = sample_poles(&mut rng, order, pole_range);
        let c_zeros: Vec<Complex<f64>> = sample_roots(&mut rng, order, 0.2, 1.2)
            .into_iter()
            .map(|z| {
                let m = modulus(&z);
                if m >= 1.0 {
                    z / (m * m)
                } else {
                    z
                }
            })
            .collect();
        let c_full = impulse_response(&monic(&c_zeros), &monic(&c_poles), t + 1)?;
        let c_true: Vec<f64> = c_full[1..].iter().map(|v| v / c_full[0]).collect();

        if !(norm > 0.0 && norm.is_finite())
            || !c_stable(&c_true, DEFAULT_STABILITY_MARGIN)
            || (check_tail && !(decayed(&b_raw) && decayed(&c_full)))
        {
            continue;
        }
        return Ok(TrueSystem {
            b_true: b_raw.iter().map(|v| v / norm).collect(),
            c_true,
            b_poles,
            b_zeros,
            c_poles,
            c_zeros,
            seed,
            attempts: attempt,
        });
    }
    Err(Error::GenerationFailed { attempts: MAX_ATTEMPTS })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub data: Dataset,
    /// Variance of the white innovation after scaling.
    pub sigma2: f64,
    /// Realized `var(B u) / var(C e)`; infinite for noiseless data.
    pub snr: f64,
}

/// `y = B u(t-1) + C e`, with `e` drawn at unit variance and then scaled so
/// the sample SNR equals `snr`. `snr = inf` gives noiseless data.
pub fn make_dataset(sys: &TrueSystem, input: &TimeSeries, snr: f64, seed: u64) -> Result<SyntheticData> {
    if !(snr > 0.0) {
        return Err(Error::InvalidParameter { name: "snr", value: snr });
    }
    let u = input.values();
    let n = u.len();
    let mut delayed_b = vec![0.0];
    delayed_b.extend_from_slice(&sys.b_true);
    let x = fir(&delayed_b, u);
    let var_x = variance(&x);
    if snr.is_infinite() {
        return Ok(SyntheticData {
            data: Dataset::from_vecs(u.to_vec(), x)?,
            sigma2: 0.0,
            snr,
        });
    }
    if !(var_x > 0.0) {
        return Err(Error::ZeroVariance("input"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = gaussian_vec(&mut rng, n, 1.0);
    let mut c_full = vec![1.0];
    c_full.extend_from_slice(&sys.c_true);
    let v = fir(&c_full, &e);
    let scale = (var_x / (snr * variance(&v))).sqrt();
    let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + scale * b).collect();
    let realized = var_x / variance(&v.iter().map(|b| scale * b).collect::<Vec<_>>());
    Ok(SyntheticData {
        data: Dataset::from_vecs(u.to_vec(), y)?,
        sigma2: scale * scale,
        snr: realized,
    })
}

fn normalized_fit(x: &[f64], x_hat: &[f64], what: &'static str) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            found: x_hat.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let den: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(den > 0.0) {
        return Err(Error::ZeroVariance(what));
    }
    let num: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(100.0 * (1.0 - num / den))
}

/// Coefficient of determination of `y_hat` against `y_v`, in percent.
pub fn cod(y_v: &[f64], y_hat: &[f64]) -> Result<f64> {
    normalized_fit(y_v, y_hat, "validation output")
}

/// Impulse-response fit of one response, in percent.
pub fn air_single(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    normalized_fit(x, x_hat, "true impulse response")
}

/// Mean of the `b` and `c` impulse-response fits.
pub fn air(b: &[f64], b_hat: &[f64], c: &[f64], c_hat: &[f64]) -> Result<f64> {
    Ok(0.5 * (air_single(b, b_hat)? + air_single(c, c_hat)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Bic,
    Oracle,
}

/// One unregularized low-order fit of the baseline grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub k1: usize,
    pub k2: usize,
    pub theta: Theta,
    pub rss: f64,
    pub bic: f64,
    pub converged: bool,
}

impl BaselineFit {
    /// Taps zero-padded (or cut) to length `t`.
    pub fn truncated(&self, t: usize) -> (Vec<f64>, Vec<f64>) {
        let p = self.theta.padded(t);
        let mut b = p.b().to_vec();
        let mut c = p.c().to_vec();
        b.truncate(t);
        c.truncate(t);
        (b, c)
    }
}

/// Plain PEM fits of MAX(`k1`, `k2`) for `k1, k2` in `1..=max_order`.
/// Orders whose solve fails are skipped.
pub fn baseline_grid(data: &Dataset, max_order: usize, inner: &InnerSolveConfig) -> Vec<BaselineFit> {
    let nf = data.len() as f64;
    let mut out = Vec::new();
    for k1 in 1..=max_order {
        for k2 in 1..=max_order {
            let Ok(res) = map_estimate_with_prior(data, Prior::Flat { nb: k1, nc: k2 }, 1.0, None, inner) else {
                continue;
            };
            let rss = res.objective * nf;
            if !(rss.is_finite()) {
                continue;
            }
            out.push(BaselineFit {
                k1,
                k2,
                theta: res.theta,
                rss,
                bic: nf * (rss / nf).ln() + (k1 + k2) as f64 * nf.ln(),
                converged: res.converged,
            });
        }
    }
    out
}

/// Picks a model from the baseline grid. `Oracle` needs the true system and
/// maximizes AIR against it; ties keep the first (lowest order) entry.
pub fn select_baseline<'a>(
    grid: &'a [BaselineFit],
    selection: Selection,
    truth: Option<&TrueSystem>,
) -> Result<&'a BaselineFit> {
    let score = |f: &BaselineFit| -> Result<f64> {
        match selection {
            Selection::Bic => Ok(-f.bic),
            Selection::Oracle => {
                let sys = truth.ok_or(Error::InvalidParameter {
                    name: "truth",
                    value: f64::NAN,
                })?;
                let t = sys.b_true.len();
                let (b, c) = f.truncated(t);
                air(&sys.b_true, &b, &sys.c_true, &c)
            }
        }
    };
    let mut best: Option<(&BaselineFit, f64)> = None;
    for f in grid {
        let s = score(f)?;
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((f, s));
        }
    }
    best.map(|(f, _)| f).ok_or(Error::SearchFailed {
        evaluations: grid.len(),
        trace: Vec::new(),
    })
}

/// Fits the baseline grid and returns the selected model.
pub fn baseline_pem(
    data: &Dataset,
    max_order: usize,
    selection: Selection,
    truth: Option<&TrueSystem>,
) -> Result<BaselineFit> {
    if selection == Selection::Oracle && truth.is_none() {
        return Err(Error::InvalidParameter {
            name: "truth",
            value: f64::NAN,
        });
    }
    let grid = baseline_grid(data, max_order, &InnerSolveConfig::default());
    select_baseline(&grid, selection, truth).cloned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Estimator {
    Tc,
    D2,
    PemBic,
    PemOracle,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Tc, Estimator::D2, Estimator::PemBic, Estimator::PemOracle];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Tc => "tc",
            Estimator::D2 => "d2",
            Estimator::PemBic => "pem-bic",
            Estimator::PemOracle => "pem-oracle",
        }
    }
}

impl core::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tc" => Ok(Estimator::Tc),
            "d2" | "dc2" => Ok(Estimator::D2),
            "pem-bic" | "bic" => Ok(Estimator::PemBic),
            "pem-oracle" | "oracle" | "pem-or" => Ok(Estimator::PemOracle),
            _ => Err(Error::InvalidParameter {
                name: "estimator",
                value: f64::NAN,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareWaveSpec {
    pub period: usize,
    pub duty: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for SquareWaveSpec {
    fn default() -> Self {
        Self {
            period: 650,
            duty: 0.5,
            lo: -0.5,
            hi: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub n_runs: usize,
    pub order: usize,
    pub pole_range: (f64, f64),
    pub t: usize,
    pub n: usize,
    pub n_v: usize,
    pub snr: f64,
    pub input: SquareWaveSpec,
    pub baseline_max_order: usize,
    pub master_seed: u64,
    pub estimators: Vec<Estimator>,
    pub arx_order: usize,
    pub search_max_evals: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl BenchmarkConfig {
    /// Full-scale protocol: 200 systems of order 40.
    pub fn full() -> Self {
        Self {
            n_runs: 200,
            order: 40,
            pole_range: (0.8, 0.9),
            t: 50,
            n: 2000,
            n_v: 1000,
            snr: 1.0,
            input: SquareWaveSpec::default(),
            baseline_max_order: 10,
            master_seed: 1,
            estimators: Estimator::ALL.to_vec(),
            arx_order: DEFAULT_ARX_ORDER,
            search_max_evals: 300,
        }
    }

    /// Reduced protocol: 20 systems of order 20.
    pub fn desk() -> Self {
        Self {
            n_runs: 20,
            order: 20,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_runs", self.n_runs),
            ("order", self.order),
            ("T", self.t),
            ("N", self.n),
            ("N_v", self.n_v),
            ("baseline_max_order", self.baseline_max_order),
            ("arx_order", self.arx_order),
            ("search_max_evals", self.search_max_evals),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidParameter { name, value: 0.0 });
            }
        }
        if self.order < 2 {
            return Err(Error::InvalidParameter {
                name: "order",
                value: self.order as f64,
            });
        }
        let (lo, hi) = self.pole_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidParameter {
                name: "pole_range",
                value: lo,
            });
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidParameter {
                name: "snr",
                value: self.snr,
            });
        }
        if self.input.period < 2 || !(self.input.duty > 0.0 && self.input.duty < 1.0) {
            return Err(Error::InvalidParameter {
                name: "input",
                value: self.input.period as f64,
            });
        }
        if self.n <= 4 * self.t {
            return Err(Error::TooFewSamples {
                n: self.n,
                required: 4 * self.t,
            });
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidParameter {
                name: "estimators",
                value: 0.0,
            });
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig {
        let mut cfg = FitConfig {
            t: self.t,
            arx_order: self.arx_order,
            ..FitConfig::default()
        };
        cfg.search.nelder_mead.max_evals = self.search_max_evals;
        cfg
    }
}

/// Independent seed for stream `stream` of run `run`.
pub fn derive_seed(master: u64, run: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(run.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(stream.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(0x2545_F491_4F6C_DD1D);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SYSTEM: u64 = 0;
const STREAM_TRAIN_NOISE: u64 = 1;
const STREAM_VALID_INPUT: u64 = 2;
const STREAM_VALID_NOISE: u64 = 3;

/// Everything generated for one Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub system: TrueSystem,
    pub train: SyntheticData,
    pub valid: SyntheticData,
}

pub fn generate_run(cfg: &BenchmarkConfig, run: usize) -> Result<RunData> {
    let r = run as u64;
    let system = random_system(cfg.order, cfg.pole_range, cfg.t, derive_seed(cfg.master_seed, r, STREAM_SYSTEM))?;
    let w = cfg.input;
    let u = square_wave(w.period, w.duty, w.lo, w.hi, cfg.n)?;
    let train = make_dataset(&system, &u, cfg.snr, derive_seed(cfg.master_seed, r, STREAM_TRAIN_NOISE))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, r, STREAM_VALID_INPUT));
    let u_v = TimeSeries::new(gaussian_vec(&mut rng, cfg.n_v, 1.0))?;
    let valid = make_dataset(&system, &u_v, cfg.snr, derive_seed(cfg.master_seed, r, STREAM_VALID_NOISE))?;
    Ok(RunData { system, train, valid })
}

/// Metrics of one estimator on one run. Failed fits carry NaN metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run: usize,
    pub estimator: Estimator,
    pub air: f64,
    pub cod: f64,
    pub converged: bool,
    pub seconds: f64,
    pub error: Option<String>,
}

impl RunOutcome {
    fn failed(run: usize, estimator: Estimator, err: &Error, seconds: f64) -> Self {
        Self {
            run,
            estimator,
            air: f64::NAN,
            cod: f64::NAN,
            converged: false,
            seconds,
            error: Some(alloc::format!("{err}")),
        }
    }
}

/// AIR against the truth and validation COD of an estimate.
pub fn score(theta: &Theta, sys: &TrueSystem, valid: &Dataset) -> Result<(f64, f64)> {
    let t = sys.b_true.len();
    let p = theta.padded(t);
    let a = air(&sys.b_true, &p.b()[..t], &sys.c_true, &p.c()[..t])?;
    let y_hat = predict(theta, valid)?;
    let c = cod(valid.y(), y_hat.values())?;
    Ok((a, c))
}

/// Runs every configured estimator on run `run`. Never fails: errors are
/// recorded in the outcomes.
pub fn run_single(cfg: &BenchmarkConfig, run: usize, clock: &dyn Clock) -> Vec<RunOutcome> {
    let data = match generate_run(cfg, run) {
        Ok(d) => d,
        Err(e) => {
            return cfg
                .estimators
                .iter()
                .map(|&est| RunOutcome::failed(run, est, &e, 0.0))
                .collect()
        }
    };
    let fit_cfg = cfg.fit_config();
    let train = &data.train.data;
    let valid = &data.valid.data;
    let mut out = Vec::with_capacity(cfg.estimators.len());
    let mut grid: Option<(Vec<BaselineFit>, f64)> = None;
    for &est in &cfg.estimators {
        let t0 = clock.seconds();
        let result: Result<(Theta, bool, f64)> = match est {
            Estimator::Tc | Estimator::D2 => {
                let kind = if est == Estimator::Tc {
                    KernelKind::Tc
                } else {
                    KernelKind::Dc2
                };
                fit_with_clock(train, kind, &fit_cfg, clock).map(|f| {
                    let ok = f.final_solve.converged && !f.evidence.flagged();
                    (f.theta_hat, ok, 0.0)
                })
            }
            Estimator::PemBic | Estimator::PemOracle => {
                let extra = match &grid {
                    Some(_) => 0.0,
                    None => {
                        let g0 = clock.seconds();
                        let g = baseline_grid(train, cfg.baseline_max_order, &InnerSolveConfig::default());
                        let dt = clock.seconds() - g0;
                        grid = Some((g, dt));
                        dt
                    }
                };
                let (g, grid_seconds) = grid.as_ref().expect("just filled");
                let selection = if est == Estimator::PemBic {
                    Selection::Bic
                } else {
                    Selection::Oracle
                };
                // the grid is shared; charge its cost to each baseline
                let shared = if extra > 0.0 { 0.0 } else { *grid_seconds };
                select_baseline(g, selection, Some(&data.system)).map(|f| (f.theta.clone(), f.converged, shared))
            }
        };
        let elapsed = clock.seconds() - t0;
        out.push(match result.and_then(|(theta, ok, shared)| {
            score(&theta, &data.system, valid).map(|(a, c)| (a, c, ok, shared))
        }) {
            Ok((a, c, ok, shared)) => RunOutcome {
                run,
                estimator: est,
                air: a,
                cod: c,
                converged: ok,
                seconds: elapsed + shared,
                error: None,
            },
            Err(e) => RunOutcome::failed(run, est, &e, elapsed),
        });
    }
    out
}

/// Sequential sweep over all runs.
pub fn monte_carlo(cfg: &BenchmarkConfig, clock: &dyn Clock) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    Ok((0..cfg.n_runs).flat_map(|r| run_single(cfg, r, clock)).collect())
}

/// Box-and-whisker statistics with whiskers at 1.5 IQR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub lo_whisker: f64,
    pub hi_whisker: f64,
    pub n_outliers: usize,
    pub n: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Summary of the finite entries of `values`; `None` if there are none.
pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q1 = quantile(&v, 0.25);
    let q3 = quantile(&v, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence).collect();
    Some(BoxStats {
        median: quantile(&v, 0.5),
        q1,
        q3,
        lo_whisker: inside.first().copied().unwrap_or(q1),
        hi_whisker: inside.last().copied().unwrap_or(q3),
        n_outliers: v.len() - inside.len(),
        n: v.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Air,
    Cod,
}

/// Per-estimator box statistics of one metric, in configuration order.
pub fn summarize(outcomes: &[RunOutcome], estimators: &[Estimator], metric: Metric) -> Vec<(Estimator, Option<BoxStats>)> {
    estimators
        .iter()
        .map(|&est| {
            let vals: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.estimator == est)
                .map(|o| match metric {
                    Metric::Air => o.air,
                    Metric::Cod => o.cod,
                })
                .collect();
            (est, box_stats(&vals))
        })
        .collect()
}

/// One draw of the predictor-prior illustration.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDraw {
    /// Predictor taps `a_1 .. a_T` of `A(z)`.
    pub a: Vec<f64>,
    /// Predictor taps `f_0 .. f_{T-1}` of `F(z)`.
    pub f: Vec<f64>,
    /// Forward taps `b_0 .. b_{T-1}` of `B = F C`.
    pub b: Vec<f64>,
    /// Forward taps `c_1 .. c_T` of `C = 1 / (1 - A)`.
    pub c: Vec<f64>,
    /// `1 - A(z)` has a root on or outside the unit circle.
    pub unstable: bool,
}

/// Maps predictor taps to truncated forward impulse responses.
pub fn predictor_to_forward(a: &[f64], f: &[f64], t: usize) -> DemoDraw {
    let neg_a: Vec<f64> = a.iter().map(|v| -v).collect();
    let mut impulse = vec![0.0; t + 1];
    impulse[0] = 1.0;
    let c_full = inverse_monic(&neg_a, &impulse);
    let mut f_pad = f.to_vec();
    f_pad.resize(t, 0.0);
    let b = fir(&c_full[..t], &f_pad);
    DemoDraw {
        a: a.to_vec(),
        f: f.to_vec(),
        b,
        c: c_full[1..].to_vec(),
        unstable: !c_stable(&neg_a, 1.0),
    }
}

/// Draws predictor impulse responses from independent TC priors with decay
/// rates `beta_a` and `beta_f` and maps them to the forward form.
pub fn prior_correlation_demo(beta_a: f64, beta_f: f64, t: usize, draws: usize, seed: u64) -> Result<Vec<DemoDraw>> {
    let la = tc_kernel(beta_a, t)?.cholesky().ok_or(Error::Factorization {
        block: "a",
        jitter: 0.0,
    })?;
    let lf = tc_kernel(beta_f, t)?.cholesky().ok_or(Error::Factorization {
        block: "f",
        jitter: 0.0,
    })?;
    let (la, lf) = (la.l(), lf.l());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        let a = &la * DVector::from_vec(gaussian_vec(&mut rng, t, 1.0));
        let f = &lf * DVector::from_vec(gaussian_vec(&mut rng, t, 1.0));
        out.push(predictor_to_forward(a.as_slice(), f.as_slice(), t));
    }
    Ok(out)
}

/// Pearson correlation of `|b_k|` against `|c_k|`, pooled over all taps of
/// the stable draws.
pub fn tap_magnitude_correlation(draws: &[DemoDraw]) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for d in draws.iter().filter(|d| !d.unstable) {
        for (b, c) in d.b.iter().zip(&d.c) {
            xs.push(b.abs());
            ys.push(c.abs());
        }
    }
    if xs.len() < 2 {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Largest pole modulus of a generated response.
pub fn dominant_modulus(poles: &[Complex<f64>]) -> f64 {
    poles.iter().map(modulus).fold(0.0, f64::max)
}

/// Largest root modulus of the monic polynomial `1 + c_1 z^-1 + ...`.
pub fn max_root_modulus(c: &[f64]) -> f64 {
    root_moduli(c).into_iter().fold(0.0, f64::max)
}
