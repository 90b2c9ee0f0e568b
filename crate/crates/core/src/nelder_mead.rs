//! Derivative-free simplex minimization.

use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    /// Stop once `max f - min f` over the simplex drops below this.
    pub spread_tol: f64,
    /// Edge length of the axis-aligned starting simplex.
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evals: 300,
            spread_tol: 1e-3,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// `x0` plus `x0 + step * e_i` for every axis.
pub fn initial_simplex(x0: &[f64], step: f64) -> Vec<Vec<f64>> {
    let mut s = Vec::with_capacity(x0.len() + 1);
    s.push(x0.to_vec());
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] += step;
        s.push(v);
    }
    s
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `f` from the simplex `simplex` (`n + 1` points in `R^n`).
///
/// Standard reflection/expansion/contraction/shrink coefficients
/// (1, 2, 1/2, 1/2). Ties are broken by vertex position, so the run is
/// fully deterministic. NaN values count as `+inf`.
pub fn minimize<F>(f: F, simplex: Vec<Vec<f64>>, cfg: &NelderMeadConfig) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = simplex.len().saturating_sub(1);
    assert!(
        simplex.iter().all(|v| v.len() == n),
        "simplex needs n + 1 points of dimension n"
    );
    let mut f = Counted { f, evals: 0 };
    let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    for v in simplex {
        if f.evals >= cfg.max_evals.max(1) && !pts.is_empty() {
            pts.push((v, f64::INFINITY));
            continue;
        }
        let fv = f.call(&v);
        pts.push((v, fv));
    }

    let spread = |pts: &[(Vec<f64>, f64)]| pts[n].1 - pts[0].1;
    loop {
        // stable sort keeps earlier vertices first among equal values
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let s = spread(&pts);
        if s < cfg.spread_tol {
            return finish(pts, f.evals, true);
        }
        if f.evals >= cfg.max_evals || n == 0 {
            return finish(pts, f.evals, false);
        }

        let mut centroid = alloc::vec![0.0; n];
        for (p, _) in &pts[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v;
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }
        let toward = |t: f64, target: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(target)
                .map(|(c, x)| c + t * (x - c))
                .collect()
        };

        let worst = pts[n].0.clone();
        let f_best = pts[0].1;
        let f_second = pts[n - 1].1;
        let f_worst = pts[n].1;

        let xr = toward(-1.0, &worst);
        let fr = f.call(&xr);
        if fr < f_best {
            let xe = toward(-2.0, &worst);
            let fe = f.call(&xe);
            pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < f_second {
            pts[n] = (xr, fr);
            continue;
        }
        if fr < f_worst {
            let xc = toward(-0.5, &worst);
            let fc = f.call(&xc);
            if fc <= fr {
                pts[n] = (xc, fc);
                continue;
            }
        } else {
            let xc = toward(0.5, &worst);
            let fc = f.call(&xc);
            if fc < f_worst {
                pts[n] = (xc, fc);
                continue;
            }
        }
        // shrink toward the best vertex
        let best = pts[0].0.clone();
        for (p, fp) in pts.iter_mut().skip(1) {
            for (x, b) in p.iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            *fp = f.call(p);
        }
    }
}

fn finish(mut pts: Vec<(Vec<f64>, f64)>, evaluations: usize, converged: bool) -> NelderMeadResult {
    let (x, fx) = pts.swap_remove(0);
    NelderMeadResult {
        x,
        fx,
        evaluations,
        converged,
    }
}
