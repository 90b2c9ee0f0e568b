//! Parallel Monte Carlo driver.

use std::time::Instant;

use rayon::prelude::*;

use kpem_core::benchmark::{run_single, BenchmarkConfig, RunOutcome};
use kpem_core::pipeline::Clock;

use crate::error::{Error, Result};

/// Monotonic wall clock measured from construction.
#[derive(Debug, Clone, Copy)]
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Runs every Monte Carlo run on `workers` threads. Outcomes come back in
/// run order; seeds depend only on the run index, so the worker count never
/// changes results.
pub fn monte_carlo_parallel(cfg: &BenchmarkConfig, workers: usize) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    if workers == 0 {
        return Err(Error::Usage("workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Data(format!("cannot start worker pool: {e}")))?;
    let per_run: Vec<Vec<RunOutcome>> = pool.install(|| {
        (0..cfg.n_runs)
            .into_par_iter()
            .map(|r| run_single(cfg, r, &SystemClock::new()))
            .collect()
    });
    Ok(per_run.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use kpem_core::benchmark::Estimator;

    #[test]
    fn clock_advances() {
        let c = SystemClock::new();
        let a = c.seconds();
        std::thread::sleep(std::time::Duration::from_millis(2));
        assert!(c.seconds() > a);
    }

    #[test]
    fn zero_workers_is_a_usage_error() {
        let mut cfg = BenchmarkConfig::desk();
        cfg.n_runs = 1;
        assert!(matches!(monte_carlo_parallel(&cfg, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn outcomes_are_in_run_order() {
        let mut cfg = BenchmarkConfig::desk();
        cfg.n_runs = 3;
        cfg.order = 4;
        cfg.t = 6;
        cfg.n = 200;
        cfg.n_v = 100;
        cfg.input.period = 40;
        cfg.baseline_max_order = 2;
        cfg.estimators = vec![Estimator::PemBic, Estimator::PemOracle];
        let out = monte_carlo_parallel(&cfg, 2).unwrap();
        let order: Vec<(usize, Estimator)> = out.iter().map(|o| (o.run, o.estimator)).collect();
        let expected: Vec<(usize, Estimator)> = (0..3)
            .flat_map(|r| [(r, Estimator::PemBic), (r, Estimator::PemOracle)])
            .collect();
        assert_eq!(order, expected);
    }
}
