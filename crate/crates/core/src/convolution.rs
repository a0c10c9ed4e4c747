//! Stochastic convolutions `V_t = int_0^t S_{t-s} dZ_s` on a grid and the two maximal /
//! pathwise inequality statistics built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{SemigroupRep, StateVector};
use crate::noise::TimeGrid;

/// `V_0 = 0`, `V_{n+1} = S_dt (V_n + dZ_n)`, so `V_n = sum_{m<n} S_{(n-m) dt} dZ_m`.
///
/// Returns `n_steps + 1` states.
pub fn stochastic_convolution(rep: &SemigroupRep, dz: &[Vec<f64>], grid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    if dz.len() != grid.n_steps {
        return Err(Error::invalid(
            "convolution",
            format!("grid has {} steps but {} increments were given", grid.n_steps, dz.len()),
        ));
    }
    let j = rep.dim();
    let prop = rep.propagator(grid.dt())?;
    let mut out = Vec::with_capacity(grid.n_steps + 1);
    out.push(vec![0.0; j]);
    let mut acc = vec![0.0; j];
    for d in dz {
        rep.space().check(d.len())?;
        let last = out.last().expect("non-empty");
        acc.iter_mut().zip(last.iter().zip(d)).for_each(|(a, (v, z))| *a = v + z);
        let mut next = vec![0.0; j];
        prop.apply(&acc, &mut next);
        out.push(next);
    }
    Ok(out)
}

/// Same quantity by the double sum `sum_{m<n} S_{(n-m) dt} dZ_m`, `O(n^2)`.
pub fn stochastic_convolution_direct(
    rep: &SemigroupRep,
    dz: &[Vec<f64>],
    grid: &TimeGrid,
) -> Result<Vec<Vec<f64>>> {
    if dz.len() != grid.n_steps {
        return Err(Error::invalid("convolution", "increments do not match the grid"));
    }
    let j = rep.dim();
    let dt = grid.dt();
    let mut out = vec![vec![0.0; j]];
    let mut tmp = vec![0.0; j];
    for n in 1..=grid.n_steps {
        let mut v = vec![0.0; j];
        for (m, d) in dz.iter().enumerate().take(n) {
            let p = rep.propagator((n - m) as f64 * dt)?;
            p.apply(d, &mut tmp);
            v.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        }
        out.push(v);
    }
    Ok(out)
}

/// Per-step residual of the pathwise Ito-type inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItoResidual {
    /// `rhs(t_n) - ||X_n||^2` for `n = 0..=n_steps`.
    pub residuals: Vec<f64>,
    pub min_residual: f64,
    /// `max(1, ||X0||^2, sup_n ||X_n||^2)`.
    pub energy_scale: f64,
}

impl ItoResidual {
    /// `min_residual / energy_scale`.
    pub fn relative_min(&self) -> f64 {
        self.min_residual / self.energy_scale
    }
}

/// Residual of
/// `||X_t||^2 <= e^{2 alpha t}||X_0||^2 + 2 int e^{2 alpha (t-s)} <X_{s-}, dZ_s> + int e^{2 alpha (t-s)} d[Z]_s`
/// for `X_n = S_{t_n} X0 + V_n` with `V` the convolution of `dz` and left-point sums.
/// `dqv[m]` is added to `2<X_m, dz_m>` in step `m`: the `d[Z]` increment plus any
/// correction of the left-point sum.
pub fn ito_residual(
    rep: &SemigroupRep,
    x0: &StateVector,
    dz: &[Vec<f64>],
    dqv: &[f64],
    grid: &TimeGrid,
) -> Result<ItoResidual> {
    if dz.len() != grid.n_steps || dqv.len() != grid.n_steps {
        return Err(Error::invalid("convolution", "increments do not match the grid"));
    }
    let space = rep.space();
    space.check(x0.dim())?;
    let prop = rep.propagator(grid.dt())?;
    let growth = (2.0 * rep.alpha() * grid.dt()).exp();
    let j = rep.dim();
    let mut x = x0.coords().to_vec();
    let mut acc = vec![0.0; j];
    let x0_sq = space.norm_sq(&x);
    // rhs_n = e^{2 alpha dt} (rhs_{n-1} + 2<X_{n-1}, dZ> + d[Z]) starting at ||X0||^2
    let mut rhs = x0_sq;
    let mut residuals = Vec::with_capacity(grid.n_steps + 1);
    residuals.push(0.0);
    let mut sup = x0_sq;
    for (d, q) in dz.iter().zip(dqv) {
        rhs = growth * (rhs + 2.0 * space.inner(&x, d) + q);
        acc.iter_mut().zip(x.iter().zip(d)).for_each(|(a, (xi, di))| *a = xi + di);
        prop.apply(&acc, &mut x);
        let e = space.norm_sq(&x);
        sup = sup.max(e);
        residuals.push(rhs - e);
    }
    let min_residual = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ItoResidual {
        residuals,
        min_residual,
        energy_scale: sup.max(1.0),
    })
}

/// One ensemble member for the maximal inequality: `sup_n ||V_n||^2` and `<M>_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaximalSample {
    pub sup_sq: f64,
    pub qv: f64,
}

impl MaximalSample {
    pub fn from_path(rep: &SemigroupRep, v: &[Vec<f64>], qv: f64) -> Self {
        let sup_sq = v.iter().map(|x| rep.space().norm_sq(x)).fold(0.0, f64::max);
        MaximalSample { sup_sq, qv }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KotelenezReport {
    pub ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub constant: f64,
    pub pass: bool,
}

/// `mean(sup ||V||^2) / (e^{4 alpha T} mean <M>_T)` with a percentile bootstrap interval
/// (`resamples` draws, central `level` mass). Negative `alpha` is replaced by 0.
/// Passes iff the ratio is at most `constant`.
pub fn kotelenez_statistic(
    alpha: f64,
    horizon: f64,
    samples: &[MaximalSample],
    constant: f64,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<KotelenezReport> {
    if samples.is_empty() {
        return Err(Error::invalid("convolution", "empty ensemble"));
    }
    if samples.len() < 100 {
        return Err(Error::invalid(
            "convolution",
            format!("maximal statistic needs at least 100 paths, got {}", samples.len()),
        ));
    }
    let scale = (4.0 * alpha.max(0.0) * horizon).exp();
    let ratio_of = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / (scale * den) };
    let n = samples.len();
    let num: f64 = samples.iter().map(|s| s.sup_sq).sum::<f64>() / n as f64;
    let den: f64 = samples.iter().map(|s| s.qv).sum::<f64>() / n as f64;
    let ratio = ratio_of(num, den);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot: Vec<f64> = (0..resamples)
        .map(|_| {
            let (mut a, mut b) = (0.0, 0.0);
            for _ in 0..n {
                let s = &samples[rng.random_range(0..n)];
                a += s.sup_sq;
                b += s.qv;
            }
            ratio_of(a, b)
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let (ci_low, ci_high) = if boot.is_empty() {
        (ratio, ratio)
    } else {
        let q = |p: f64| boot[((p * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        (q((1.0 - level) / 2.0), q((1.0 + level) / 2.0))
    };
    Ok(KotelenezReport {
        ratio,
        ci_low,
        ci_high,
        constant,
        pass: ratio.is_finite() && ratio <= constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::SpaceSpec;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn diag(l: Vec<f64>) -> SemigroupRep {
        let space = Arc::new(SpaceSpec::euclidean(l.len()).unwrap());
        SemigroupRep::diagonal(l, 0.0, space).unwrap()
    }

    #[test]
    fn zero_increments_give_zero() {
        let rep = diag(vec![1.0, 2.0]);
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let v = stochastic_convolution(&rep, &vec![vec![0.0; 2]; 8], &grid).unwrap();
        assert!(v.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn single_increment_decays() {
        let rep = diag(vec![1.0]);
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let mut dz = vec![vec![0.0]; 10];
        dz[0][0] = 2.0;
        let v = stochastic_convolution(&rep, &dz, &grid).unwrap();
        for (n, vn) in v.iter().enumerate().skip(1) {
            assert_abs_diff_eq!(vn[0], 2.0 * (-grid.time(n)).exp(), epsilon = 1e-14);
        }
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let rep = diag(vec![1.0]);
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        assert!(stochastic_convolution(&rep, &vec![vec![0.0]; 9], &grid).is_err());
    }

    #[test]
    fn residual_of_pure_contraction() {
        let rep = diag(vec![1.0]);
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let x0 = StateVector::new(vec![1.5], rep.space().clone()).unwrap();
        let r = ito_residual(&rep, &x0, &vec![vec![0.0]; 100], &[0.0; 100], &grid).unwrap();
        for (n, res) in r.residuals.iter().enumerate() {
            let t = grid.time(n);
            assert_abs_diff_eq!(*res, 2.25 - 2.25 * (-2.0 * t).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn residual_vanishes_for_identity() {
        let rep = diag(vec![0.0, 0.0]);
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let x0 = StateVector::new(vec![1.0, -2.0], rep.space().clone()).unwrap();
        let r = ito_residual(&rep, &x0, &vec![vec![0.0; 2]; 50], &[0.0; 50], &grid).unwrap();
        assert!(r.residuals.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn maximal_statistic_examples() {
        let zero = vec![MaximalSample { sup_sq: 0.0, qv: 1.0 }; 100];
        assert_eq!(kotelenez_statistic(0.0, 1.0, &zero, 16.0, 50, 0.95, 1).unwrap().ratio, 0.0);
        assert!(kotelenez_statistic(0.0, 1.0, &[], 16.0, 50, 0.95, 1).is_err());
        assert!(kotelenez_statistic(0.0, 1.0, &zero[..10], 16.0, 50, 0.95, 1).is_err());
    }

    #[test]
    fn growth_factor_uses_nonnegative_exponent() {
        let s: Vec<MaximalSample> = (0..100).map(|i| MaximalSample { sup_sq: 1.0 + i as f64, qv: 2.0 }).collect();
        let flat = kotelenez_statistic(0.0, 1.0, &s, 16.0, 20, 0.95, 3).unwrap();
        let negative = kotelenez_statistic(-10.0, 1.0, &s, 16.0, 20, 0.95, 3).unwrap();
        assert_eq!(flat, negative);
        let grown = kotelenez_statistic(0.5, 1.0, &s, 16.0, 20, 0.95, 3).unwrap();
        assert!((grown.ratio * 2f64.exp() - flat.ratio).abs() < 1e-12);
    }
}
