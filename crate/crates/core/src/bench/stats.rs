use serde::{Deserialize, Serialize};

use crate::error::BenchError;

use super::clock::Clock;

/// Fewest timed runs accepted by [`measure_latency`].
pub const MIN_RUNS: usize = 3;

/// Summary of per-run wall times, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub stddev: f64,
    pub n_runs: usize,
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Result<Self, BenchError> {
        if ms.len() < MIN_RUNS {
            return Err(BenchError::TooFewRuns { min: MIN_RUNS, got: ms.len() });
        }
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean,
            p50: percentile(&sorted, 0.50),
            p95: percentile(&sorted, 0.95),
            stddev: var.sqrt(),
            n_runs: ms.len(),
        })
    }

    /// All-zero stats, used when timing is stripped from a report.
    pub fn zeroed(n_runs: usize) -> Self {
        Self { mean: 0.0, p50: 0.0, p95: 0.0, stddev: 0.0, n_runs }
    }
}

/// Linear interpolation between closest ranks.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Times `n_runs` calls of `run` after `n_warmup` untimed ones.
pub fn measure_latency<E>(
    clock: &dyn Clock,
    n_warmup: usize,
    n_runs: usize,
    mut run: impl FnMut() -> Result<(), E>,
) -> Result<LatencyStats, BenchError>
where
    BenchError: From<E>,
{
    if n_runs < MIN_RUNS {
        return Err(BenchError::TooFewRuns { min: MIN_RUNS, got: n_runs });
    }
    for _ in 0..n_warmup {
        run()?;
    }
    let mut ms = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let start = clock.now();
        run()?;
        ms.push((clock.now() - start).as_secs_f64() * 1e3);
    }
    LatencyStats::from_samples(&ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{ManualClock, MonotonicClock};
    use proptest::prelude::*;
    use std::time::Duration;

    #[test]
    fn fixed_duration_stub() {
        let clock = ManualClock::new();
        let mut calls = 0;
        let s = measure_latency(&clock, 2, 5, || {
            calls += 1;
            clock.advance(Duration::from_millis(10));
            Ok::<_, BenchError>(())
        })
        .unwrap();
        assert_eq!(calls, 7);
        assert_eq!(s.n_runs, 5);
        assert!((s.mean - 10.0).abs() < 1e-9);
        assert!(s.stddev.abs() < 1e-9);
    }

    #[test]
    fn sleeping_stub_on_the_real_clock() {
        let s = measure_latency(&MonotonicClock::new(), 0, 3, || {
            std::thread::sleep(Duration::from_millis(10));
            Ok::<_, BenchError>(())
        })
        .unwrap();
        assert!(s.mean >= 10.0 && s.mean < 500.0, "{}", s.mean);
    }

    #[test]
    fn run_count_precondition() {
        let clock = ManualClock::new();
        let r = measure_latency(&clock, 0, 2, || Ok::<_, BenchError>(()));
        assert!(matches!(r, Err(BenchError::TooFewRuns { min: 3, got: 2 })));
        assert!(measure_latency(&clock, 0, 3, || Ok::<_, BenchError>(())).is_ok());
    }

    #[test]
    fn percentiles_of_known_samples() {
        let s = LatencyStats::from_samples(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(s.p50, 3.0);
        assert!((s.p95 - 4.8).abs() < 1e-12);
        assert!((s.stddev - 2.5f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn order_statistics(ms in proptest::collection::vec(0.0f64..1e4, 3..50)) {
            let s = LatencyStats::from_samples(&ms).unwrap();
            prop_assert!(s.p95 >= s.p50 && s.p50 >= 0.0);
            prop_assert!(s.stddev >= 0.0);
        }
    }
}
