//! Time-series containers, signal generators and causal filtering.
//!
//! Every recursion here runs with a zero pre-window: samples before the
//! first stored value are taken as zero. For stable filters the resulting
//! transient decays geometrically.

use alloc::vec;
use alloc::vec::Vec;

// inherent float methods shadow this whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A finite, non-empty, uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    start_index: i64,
}

impl TimeSeries {
    /// Wraps `values` as samples `t = 1..=N`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_start(values, 1)
    }

    pub fn with_start(values: Vec<f64>, start_index: i64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySeries);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            values,
            start_index,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    /// Sample variance with the mean removed, normalized by `N`.
    pub fn variance(&self) -> f64 {
        variance(&self.values)
    }
}

/// Polynomial `p_0 + p_1 z^-1 + ... + p_m z^-m` in the backward shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::EmptySeries);
        }
        if let Some(index) = coeffs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { coeffs })
    }

    /// The monic polynomial `1 + tail_1 z^-1 + ... + tail_n z^-n`.
    pub fn monic(tail: &[f64]) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(tail.len() + 1);
        coeffs.push(1.0);
        coeffs.extend_from_slice(tail);
        Self::new(coeffs)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Product of two polynomials (full convolution).
    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial { coeffs: out }
    }
}

/// Input/output record `{(u(t), y(t)), t = 1..N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    u: TimeSeries,
    y: TimeSeries,
}

impl Dataset {
    pub fn new(u: TimeSeries, y: TimeSeries) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: u.len(),
                found: y.len(),
            });
        }
        Ok(Self { u, y })
    }

    pub fn from_vecs(u: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::new(TimeSeries::new(u)?, TimeSeries::new(y)?)
    }

    pub fn u(&self) -> &[f64] {
        self.u.values()
    }

    pub fn y(&self) -> &[f64] {
        self.y.values()
    }

    pub fn input(&self) -> &TimeSeries {
        &self.u
    }

    pub fn output(&self) -> &TimeSeries {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// First `n` samples.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::from_vecs(self.u()[..n].to_vec(), self.y()[..n].to_vec())
    }

    /// Both signals multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::from_vecs(
            self.u().iter().map(|v| v * gain).collect(),
            self.y().iter().map(|v| v * gain).collect(),
        )
    }
}

/// `out(t) = sum_k p_k x(t-k)` with a zero pre-window.
pub fn filter_poly(p: &Polynomial, x: &TimeSeries) -> TimeSeries {
    TimeSeries {
        values: fir(p.coeffs(), x.values()),
        start_index: x.start_index,
    }
}

/// `out = (num / den) x` with zero initial conditions.
pub fn filter_rational(num: &Polynomial, den: &Polynomial, x: &TimeSeries) -> Result<TimeSeries> {
    let d0 = den.coeffs()[0];
    if d0 == 0.0 {
        return Err(Error::NonCausalDenominator);
    }
    let n = num.coeffs();
    let d = den.coeffs();
    let xs = x.values();
    let mut out = vec![0.0; xs.len()];
    for t in 0..xs.len() {
        let mut acc = 0.0;
        for (k, nk) in n.iter().enumerate().take(t + 1) {
            acc += nk * xs[t - k];
        }
        for (k, dk) in d.iter().enumerate().skip(1).take(t) {
            acc -= dk * out[t - k];
        }
        out[t] = acc / d0;
    }
    Ok(TimeSeries {
        values: out,
        start_index: x.start_index,
    })
}

/// Two-level periodic signal that starts with the `hi` segment.
pub fn square_wave(period: usize, duty: f64, lo: f64, hi: f64, n: usize) -> Result<TimeSeries> {
    if period < 2 {
        return Err(Error::InvalidParameter {
            name: "period",
            value: period as f64,
        });
    }
    if !(duty > 0.0 && duty < 1.0) {
        return Err(Error::InvalidParameter {
            name: "duty",
            value: duty,
        });
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter {
            name: "level",
            value: if lo.is_finite() { hi } else { lo },
        });
    }
    let high_len = (duty * period as f64).ceil() as usize;
    let values = (0..n)
        .map(|t| if t % period < high_len { hi } else { lo })
        .collect();
    TimeSeries::new(values)
}

/// I.i.d. zero-mean Gaussian samples, reproducible from `seed`.
pub fn white_noise(variance: f64, n: usize, seed: u64) -> Result<TimeSeries> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidParameter {
            name: "variance",
            value: variance,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TimeSeries::new(gaussian_vec(&mut rng, n, variance.sqrt()))
}

pub(crate) fn gaussian_vec<R: rand::Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub(crate) fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Causal FIR convolution over slices.
pub(crate) fn fir(p: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, pk) in p.iter().enumerate().take(t + 1) {
            acc += pk * x[t - k];
        }
        *o = acc;
    }
    out
}

/// Applies `1 / (1 + c_1 z^-1 + ... + c_n z^-n)` to `x`.
pub(crate) fn inverse_monic(c: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for t in 0..x.len() {
        let mut acc = x[t];
        for (k, ck) in c.iter().enumerate().take(t) {
            acc -= ck * out[t - 1 - k];
        }
        out[t] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(v: &[f64]) -> TimeSeries {
        TimeSeries::new(v.to_vec()).unwrap()
    }

    fn poly(v: &[f64]) -> Polynomial {
        Polynomial::new(v.to_vec()).unwrap()
    }

    #[test]
    fn fir_examples() {
        let x = ts(&[3.0, 1.0, 4.0]);
        assert_eq!(filter_poly(&poly(&[1.0]), &x).values(), &[3.0, 1.0, 4.0]);
        assert_eq!(filter_poly(&poly(&[0.0, 1.0]), &x).values(), &[0.0, 3.0, 1.0]);
        let x = ts(&[2.0, 0.0, 0.0]);
        assert_eq!(filter_poly(&poly(&[1.0, 0.5]), &x).values(), &[2.0, 1.0, 0.0]);
    }

    #[test]
    fn rational_examples() {
        let x = ts(&[0.3, -1.0, 2.5]);
        let y = filter_rational(&poly(&[1.0]), &poly(&[1.0]), &x).unwrap();
        assert_eq!(y.values(), x.values());

        let imp = ts(&[1.0, 0.0, 0.0, 0.0]);
        let y = filter_rational(&poly(&[1.0]), &poly(&[1.0, -0.5]), &imp).unwrap();
        assert_eq!(y.values(), &[1.0, 0.5, 0.25, 0.125]);

        let err = filter_rational(&poly(&[1.0]), &poly(&[0.0, 1.0]), &imp).unwrap_err();
        assert_eq!(err, Error::NonCausalDenominator);
    }

    /// Long division of `num / den` to `taps` coefficients, written
    /// independently of the filtering recursion.
    fn long_division(num: &[f64], den: &[f64], taps: usize) -> Vec<f64> {
        let mut rem: Vec<f64> = num.to_vec();
        rem.resize(taps + den.len(), 0.0);
        let mut q = vec![0.0; taps];
        for k in 0..taps {
            q[k] = rem[k] / den[0];
            for (j, dj) in den.iter().enumerate() {
                rem[k + j] -= q[k] * dj;
            }
        }
        q
    }

    #[test]
    fn rational_matches_truncated_impulse_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            // stable denominator from real roots inside 0.8
            let roots: Vec<f64> = (0..3)
                .map(|_| rand::Rng::random_range(&mut rng, -0.8..0.8))
                .collect();
            let mut den = poly(&[1.0]);
            for r in &roots {
                den = den.mul(&poly(&[1.0, -r]));
            }
            let num = poly(&gaussian_vec(&mut rng, 3, 1.0));
            let x = ts(&gaussian_vec(&mut rng, 64, 1.0));
            let ir = long_division(num.coeffs(), den.coeffs(), 200);
            let direct = filter_rational(&num, &den, &x).unwrap();
            let via_fir = filter_poly(&poly(&ir), &x);
            for (a, b) in direct.values().iter().zip(via_fir.values()) {
                assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn square_wave_examples() {
        let w = square_wave(4, 0.5, 0.0, 1.0, 6).unwrap();
        assert_eq!(w.values(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        let w = square_wave(2, 0.5, -1.0, 1.0, 4).unwrap();
        assert_eq!(w.values(), &[1.0, -1.0, 1.0, -1.0]);

        let w = square_wave(650, 0.5, -0.5, 0.5, 2000).unwrap();
        assert_eq!(w.len(), 2000);
        assert_eq!(w.values()[324], 0.5);
        assert_eq!(w.values()[325], -0.5);
        assert_eq!(w.values()[650], 0.5);
        assert!(w.values().iter().all(|&v| v == 0.5 || v == -0.5));

        assert!(square_wave(1, 0.5, 0.0, 1.0, 4).is_err());
        assert!(square_wave(4, 1.0, 0.0, 1.0, 4).is_err());
        assert!(square_wave(4, 0.0, 0.0, 1.0, 4).is_err());
    }

    #[test]
    fn white_noise_moments_and_determinism() {
        let a = white_noise(1.0, 100_000, 3).unwrap();
        let v = a.variance();
        assert!((0.97..=1.03).contains(&v), "variance {v}");
        let b = white_noise(1.0, 100_000, 3).unwrap();
        assert_eq!(a, b);
        let c = white_noise(4.0, 100_000, 9).unwrap();
        assert!((c.variance() / 4.0 - 1.0).abs() <= 0.03);
        assert!(white_noise(0.0, 10, 1).is_err());
        assert!(white_noise(-1.0, 10, 1).is_err());
    }

    #[test]
    fn time_series_rejects_bad_input() {
        assert_eq!(TimeSeries::new(vec![]), Err(Error::EmptySeries));
        assert_eq!(
            TimeSeries::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        );
        assert!(Dataset::from_vecs(vec![1.0], vec![1.0, 2.0]).is_err());
    }

    fn stable_monic(roots: &[f64]) -> Polynomial {
        roots
            .iter()
            .fold(poly(&[1.0]), |acc, r| acc.mul(&poly(&[1.0, -r])))
    }

    proptest! {
        #[test]
        fn filters_are_linear(
            x in proptest::collection::vec(-5.0f64..5.0, 30),
            w in proptest::collection::vec(-5.0f64..5.0, 30),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            r1 in -0.9f64..0.9,
            r2 in -0.9f64..0.9,
        ) {
            let num = poly(&[1.0, 0.4, -0.2]);
            let den = stable_monic(&[r1, r2]);
            let combo: Vec<f64> = x.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
            let lhs = filter_rational(&num, &den, &ts(&combo)).unwrap();
            let fx = filter_rational(&num, &den, &ts(&x)).unwrap();
            let fw = filter_rational(&num, &den, &ts(&w)).unwrap();
            let scale = lhs.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for t in 0..30 {
                let rhs = a * fx.values()[t] + b * fw.values()[t];
                prop_assert!((lhs.values()[t] - rhs).abs() <= 1e-12 * scale * 10.0);
            }
            let lhs = filter_poly(&num, &ts(&combo));
            let fx = filter_poly(&num, &ts(&x));
            let fw = filter_poly(&num, &ts(&w));
            for t in 0..30 {
                let rhs = a * fx.values()[t] + b * fw.values()[t];
                prop_assert!((lhs.values()[t] - rhs).abs() <= 1e-12 * scale * 10.0);
            }
        }

        #[test]
        fn rational_inverse_round_trip(
            x in proptest::collection::vec(-5.0f64..5.0, 40),
            r in proptest::collection::vec(-0.9f64..0.9, 4),
        ) {
            let num = stable_monic(&r[..2]);
            let den = stable_monic(&r[2..]);
            let there = filter_rational(&den, &num, &ts(&x)).unwrap();
            let back = filter_rational(&num, &den, &there).unwrap();
            for (a, b) in back.values().iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
        }
    }
}
