//! Path-parallel ensembles and the small statistics used to summarise them.
//!
//! Paths are indexed `0..n`; results always come back in index order, so every
//! reduction is independent of the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Runs `job(i)` for `i in 0..n` on `workers` threads and returns results in index order.
/// The first error (by index) wins.
pub fn map_paths<T, F>(n: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if workers <= 1 {
        return (0..n).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("verification", format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        use rayon::prelude::*;
        let out: Vec<Result<T>> = (0..n).into_par_iter().map(&job).collect();
        out.into_iter().collect()
    })
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `ys` against `ts`.
pub fn ols_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    sxy / sxx
}

/// Draws `resamples` bootstrap index sets of size `n` and applies `stat` to each.
pub fn bootstrap<F>(n: usize, resamples: usize, seed: u64, mut stat: F) -> Vec<f64>
where
    F: FnMut(&[usize]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n];
    (0..resamples)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            stat(&idx)
        })
        .collect()
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let (_, se) = mean_se(xs);
    se * (xs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn order_is_independent_of_workers() {
        let one = map_paths(50, 1, |i| Ok(i * i)).unwrap();
        let four = map_paths(50, 4, |i| Ok(i * i)).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn first_error_is_reported() {
        let r: Result<Vec<usize>> = map_paths(10, 3, |i| {
            if i >= 4 {
                Err(Error::Verification(format!("path {i}")))
            } else {
                Ok(i)
            }
        });
        assert_eq!(r.unwrap_err(), Error::Verification("path 4".into()));
    }

    #[test]
    fn slope_of_line() {
        let ts = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 - 3.0 * t).collect();
        assert_abs_diff_eq!(ols_slope(&ts, &ys), -3.0, epsilon = 1e-14);
    }

    #[test]
    fn mean_and_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_abs_diff_eq!(se, (5.0f64 / 3.0 / 4.0).sqrt(), epsilon = 1e-14);
    }
}
