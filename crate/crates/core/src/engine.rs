//! Parallel execution of independent jobs with ordered results.

use rayon::prelude::*;

use crate::error::{argument, Result};

/// Runs `job(0..count)` on `workers` threads. Results come back in index
/// order and the reported error is the one with the smallest index, so the
/// outcome does not depend on `workers`.
pub fn run_indexed<T, F>(workers: usize, count: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if workers == 0 {
        return Err(argument("worker count must be at least 1"));
    }
    let outcomes: Vec<Result<T>> = if workers == 1 {
        (0..count).map(&job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| argument(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..count).into_par_iter().map(&job).collect())
    };
    outcomes.into_iter().collect()
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
