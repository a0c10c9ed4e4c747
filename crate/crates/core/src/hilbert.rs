//! Finite-dimensional Hilbert spaces with weighted inner products and exact
//! actions of the linear semigroups used by the shipped systems.
//!
//! Coordinates are always expressed in a fixed basis; the inner product is
//! `<x, y> = sum_j w_j x_j y_j`. Three semigroup representations are supported:
//!
//! * `Diagonal`: `S_t e_j = exp(-lambda_j t) e_j`.
//! * `DenseGenerator`: `S_t = expm(t A)` for an arbitrary `J x J` generator.
//! * `HyperbolicBlock`: the wave group on `(u, v)` pairs, one 2x2 rotation per mode.
//!
//! Every representation may carry a scalar `shift`, which multiplies the action by
//! `exp(shift * t)`; this is how exponentially tilted systems are expressed.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::path::SimulationPath;

/// A weighted coordinate space `R^J`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceSpec {
    dim: usize,
    weights: Vec<f64>,
    label: String,
}

impl SpaceSpec {
    pub fn new(weights: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("hilbert-core", "space dimension must be at least 1"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(
                "hilbert-core",
                format!("inner-product weights must be finite and positive, got {w}"),
            ));
        }
        Ok(SpaceSpec {
            dim: weights.len(),
            weights,
            label: label.into(),
        })
    }

    /// Unweighted `R^J`.
    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::new(vec![1.0; dim], format!("R^{dim}"))
    }

    /// Spectral truncation of `H_n`: coordinates in the `L^2` eigenbasis, weights `(1 + lambda_j)^n`.
    pub fn sobolev_scale(eigenvalues: &[f64], n: i32) -> Result<Self> {
        let w = eigenvalues.iter().map(|l| (1.0 + l).powi(n)).collect();
        Self::new(w, format!("H_{n}"))
    }

    /// Product space `H_{n+1} x H_n` for the wave group, with the energy norm on the
    /// displacement block: `u_j` weighted by `lambda_j (1 + lambda_j)^n`.
    pub fn hyperbolic_energy(eigenvalues: &[f64], n: i32) -> Result<Self> {
        let mut w: Vec<f64> = eigenvalues.iter().map(|l| l * (1.0 + l).powi(n)).collect();
        w.extend(eigenvalues.iter().map(|l| (1.0 + l).powi(n)));
        Self::new(w, format!("H_{}xH_{n} (energy)", n + 1))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        self.weights
            .iter()
            .zip(x.iter().zip(y))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    pub fn norm_sq(&self, x: &[f64]) -> f64 {
        self.inner(x, x)
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        self.norm_sq(x).sqrt()
    }

    /// `||x - y||^2` without allocating.
    pub fn dist_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(x.iter().zip(y))
            .map(|(w, (a, b))| w * (a - b) * (a - b))
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub(crate) fn check(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }
}

/// A point of a [`SpaceSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    coords: Vec<f64>,
    space: Arc<SpaceSpec>,
}

impl StateVector {
    pub fn new(coords: Vec<f64>, space: Arc<SpaceSpec>) -> Result<Self> {
        space.check(coords.len())?;
        Ok(StateVector { coords, space })
    }

    pub fn zeros(space: Arc<SpaceSpec>) -> Self {
        StateVector {
            coords: vec![0.0; space.dim()],
            space,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn space(&self) -> &Arc<SpaceSpec> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        self.space.norm(&self.coords)
    }

    pub fn norm_sq(&self) -> f64 {
        self.space.norm_sq(&self.coords)
    }

    pub fn inner(&self, other: &StateVector) -> Result<f64> {
        self.space.check(other.dim())?;
        Ok(self.space.inner(&self.coords, &other.coords))
    }

    pub fn scaled(&self, a: f64) -> StateVector {
        StateVector {
            coords: self.coords.iter().map(|c| a * c).collect(),
            space: self.space.clone(),
        }
    }

    pub fn sub(&self, other: &StateVector) -> Result<StateVector> {
        self.space.check(other.dim())?;
        Ok(StateVector {
            coords: self.coords.iter().zip(&other.coords).map(|(a, b)| a - b).collect(),
            space: self.space.clone(),
        })
    }

    pub fn add(&self, other: &StateVector) -> Result<StateVector> {
        self.space.check(other.dim())?;
        Ok(StateVector {
            coords: self.coords.iter().zip(&other.coords).map(|(a, b)| a + b).collect(),
            space: self.space.clone(),
        })
    }
}

/// The generator data of a semigroup.
#[derive(Debug, Clone, PartialEq)]
pub enum SemigroupKind {
    /// Eigenvalues `lambda_j >= 0`; `S_t` multiplies coordinate `j` by `exp(-lambda_j t)`.
    Diagonal { eigenvalues: Vec<f64> },
    /// Arbitrary generator matrix; `S_t = expm(t A)`.
    DenseGenerator { generator: DMatrix<f64> },
    /// Mode frequencies `omega_j = sqrt(lambda_j)`; state layout `[u_0..u_{J-1}, v_0..v_{J-1}]`.
    HyperbolicBlock { frequencies: Vec<f64> },
}

/// A semigroup `S_t` on a [`SpaceSpec`] with declared growth bound `||S_t|| <= exp(alpha t)`.
#[derive(Clone)]
pub struct SemigroupRep {
    kind: SemigroupKind,
    alpha: f64,
    shift: f64,
    space: Arc<SpaceSpec>,
    cache: Arc<Mutex<HashMap<u64, Arc<Propagator>>>>,
}

impl fmt::Debug for SemigroupRep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemigroupRep")
            .field("kind", &self.kind)
            .field("alpha", &self.alpha)
            .field("shift", &self.shift)
            .field("space", &self.space.label())
            .finish()
    }
}

impl PartialEq for SemigroupRep {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.alpha == other.alpha
            && self.shift == other.shift
            && self.space == other.space
    }
}

impl SemigroupRep {
    pub fn new(kind: SemigroupKind, alpha: f64, space: Arc<SpaceSpec>) -> Result<Self> {
        let expected = match &kind {
            SemigroupKind::Diagonal { eigenvalues } => {
                if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return Err(Error::invalid("hilbert-core", "diagonal eigenvalues must be >= 0"));
                }
                eigenvalues.len()
            }
            SemigroupKind::DenseGenerator { generator } => {
                if generator.nrows() != generator.ncols() {
                    return Err(Error::invalid("hilbert-core", "generator must be square"));
                }
                generator.nrows()
            }
            SemigroupKind::HyperbolicBlock { frequencies } => {
                if frequencies.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::invalid("hilbert-core", "mode frequencies must be >= 0"));
                }
                2 * frequencies.len()
            }
        };
        space.check(expected)?;
        if !alpha.is_finite() {
            return Err(Error::invalid("hilbert-core", "growth bound must be finite"));
        }
        Ok(SemigroupRep {
            kind,
            alpha,
            shift: 0.0,
            space,
            cache: Arc::default(),
        })
    }

    pub fn diagonal(eigenvalues: Vec<f64>, alpha: f64, space: Arc<SpaceSpec>) -> Result<Self> {
        Self::new(SemigroupKind::Diagonal { eigenvalues }, alpha, space)
    }

    pub fn dense(generator: DMatrix<f64>, alpha: f64, space: Arc<SpaceSpec>) -> Result<Self> {
        Self::new(SemigroupKind::DenseGenerator { generator }, alpha, space)
    }

    /// Wave group for eigenvalues `lambda_j`; frequencies are `sqrt(lambda_j)`.
    pub fn hyperbolic(eigenvalues: &[f64], alpha: f64, space: Arc<SpaceSpec>) -> Result<Self> {
        if eigenvalues.iter().any(|l| *l < 0.0) {
            return Err(Error::invalid("hilbert-core", "wave eigenvalues must be >= 0"));
        }
        let frequencies = eigenvalues.iter().map(|l| l.sqrt()).collect();
        Self::new(SemigroupKind::HyperbolicBlock { frequencies }, alpha, space)
    }

    /// `exp(shift t) S_t`, with growth bound `alpha + shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        SemigroupRep {
            kind: self.kind.clone(),
            alpha: self.alpha + shift,
            shift: self.shift + shift,
            space: self.space.clone(),
            cache: Arc::default(),
        }
    }

    pub fn kind(&self) -> &SemigroupKind {
        &self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn space(&self) -> &Arc<SpaceSpec> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    fn build(&self, t: f64) -> Propagator {
        let scale = (self.shift * t).exp();
        match &self.kind {
            SemigroupKind::Diagonal { eigenvalues } => Propagator::Diagonal(
                eigenvalues.iter().map(|l| scale * (-l * t).exp()).collect(),
            ),
            SemigroupKind::DenseGenerator { generator } => {
                let m = if t == 0.0 {
                    DMatrix::identity(generator.nrows(), generator.ncols())
                } else {
                    (generator * t).exp()
                };
                Propagator::Dense(m * scale)
            }
            SemigroupKind::HyperbolicBlock { frequencies } => {
                let blocks = frequencies
                    .iter()
                    .map(|&w| {
                        let (s, c) = (w * t).sin_cos();
                        // omega = 0 is the free particle: [1, t; 0, 1].
                        let s_over_w = if w == 0.0 { t } else { s / w };
                        [scale * c, scale * s_over_w, -scale * w * s, scale * c]
                    })
                    .collect();
                Propagator::Hyperbolic(blocks)
            }
        }
    }

    /// The step operator `S_dt`, computed once per distinct `dt` and shared afterwards.
    pub fn propagator(&self, dt: f64) -> Result<Arc<Propagator>> {
        if !(dt >= 0.0) {
            return Err(Error::NegativeTime(dt));
        }
        let key = dt.to_bits();
        if let Some(p) = self.cache.lock().expect("propagator cache poisoned").get(&key) {
            return Ok(p.clone());
        }
        let p = Arc::new(self.build(dt));
        self.cache
            .lock()
            .expect("propagator cache poisoned")
            .insert(key, p.clone());
        Ok(p)
    }

    /// `S_t x`.
    pub fn apply(&self, t: f64, x: &StateVector) -> Result<StateVector> {
        if !(t >= 0.0) {
            return Err(Error::NegativeTime(t));
        }
        if x.space().as_ref() != self.space.as_ref() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        let p = self.build(t);
        let mut out = vec![0.0; self.dim()];
        p.apply(x.coords(), &mut out);
        StateVector::new(out, self.space.clone())
    }
}

/// `S_t` for one fixed `t`, ready to be applied repeatedly.
#[derive(Debug, Clone)]
pub enum Propagator {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
    /// Per-mode `[a, b, c, d]` acting on `(u_j, v_j)`.
    Hyperbolic(Vec<[f64; 4]>),
}

impl Propagator {
    /// `out = S x`. `x` and `out` must not alias.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Propagator::Diagonal(d) => {
                for ((o, a), xi) in out.iter_mut().zip(d).zip(x) {
                    *o = a * xi;
                }
            }
            Propagator::Dense(m) => {
                let n = m.nrows();
                out[..n].fill(0.0);
                // column-major storage: accumulate column by column
                for (j, xj) in x.iter().enumerate().take(n) {
                    if *xj == 0.0 {
                        continue;
                    }
                    let col = m.column(j);
                    for (o, a) in out.iter_mut().zip(col.iter()) {
                        *o += a * xj;
                    }
                }
            }
            Propagator::Hyperbolic(blocks) => {
                let j = blocks.len();
                for (i, [a, b, c, d]) in blocks.iter().enumerate() {
                    let (u, v) = (x[i], x[i + j]);
                    out[i] = a * u + b * v;
                    out[i + j] = c * u + d * v;
                }
            }
        }
    }

    pub fn apply_in_place(&self, x: &mut [f64], scratch: &mut [f64]) {
        self.apply(x, scratch);
        x.copy_from_slice(&scratch[..x.len()]);
    }
}

/// Result of sampling `||S_t x|| / (exp(alpha t) ||x||)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionAudit {
    pub max_ratio: f64,
    pub pass: bool,
}

/// Samples the growth bound on random times in `(0, horizon]` and random plus basis
/// directions. Passes iff every ratio is at most `1 + 1e-9`.
pub fn semigroup_contraction_audit(
    rep: &SemigroupRep,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ContractionAudit> {
    if !(horizon > 0.0) || n_samples == 0 {
        return Err(Error::invalid(
            "hilbert-core",
            "audit needs horizon > 0 and at least one sample",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rep.dim();
    let w = rep.space().weights().to_vec();
    // Dense exponentials dominate; reuse a bounded set of times across samples.
    let n_times = n_samples.min(24);
    let times: Vec<f64> = (0..n_times)
        .map(|_| horizon * (1.0 - rng.random::<f64>()))
        .collect();
    let props: Vec<Propagator> = times.iter().map(|&t| rep.build(t)).collect();
    let mut out = vec![0.0; dim];
    let mut max_ratio: f64 = 0.0;
    let mut probe = |x: &[f64], k: usize, out: &mut [f64]| {
        props[k].apply(x, out);
        let r = rep.space().norm(out) / ((rep.alpha() * times[k]).exp() * rep.space().norm(x));
        max_ratio = max_ratio.max(r);
    };
    for s in 0..n_samples {
        // isotropic in the weighted norm
        let x: Vec<f64> = (0..dim)
            .map(|j| rng.sample::<f64, _>(StandardNormal) / w[j].sqrt())
            .collect();
        probe(&x, s % n_times, &mut out);
    }
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        probe(&e, j % n_times, &mut out);
    }
    Ok(ContractionAudit {
        max_ratio,
        pass: max_ratio <= 1.0 + 1e-9,
    })
}

/// Upper bound on the growth rate: the largest eigenvalue of the symmetric part of the
/// generator in weighted coordinates. `||S_t|| <= exp(omega t)` holds for this `omega`.
pub fn logarithmic_norm(generator: &DMatrix<f64>, space: &SpaceSpec) -> f64 {
    let sq: DVector<f64> = DVector::from_iterator(space.dim(), space.weights().iter().map(|w| w.sqrt()));
    let mut b = generator.clone();
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            b[(i, j)] *= sq[i] / sq[j];
        }
    }
    let sym = (&b + b.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransformDirection {
    Forward,
    Inverse,
}

/// Exponential tilt of a path: forward maps `X_t` to `exp(-alpha t) X_t` and every
/// recorded increment taken at `t_m` to `exp(-alpha t_m) dZ_m`; inverse undoes it.
pub fn exp_transform(path: &SimulationPath, alpha: f64, direction: TransformDirection) -> SimulationPath {
    let sign = match direction {
        TransformDirection::Forward => -1.0,
        TransformDirection::Inverse => 1.0,
    };
    let mut out = path.clone();
    if alpha == 0.0 {
        return out;
    }
    for (n, state) in out.states.iter_mut().enumerate() {
        let f = (sign * alpha * path.grid.time(n)).exp();
        state.iter_mut().for_each(|c| *c *= f);
    }
    for (m, inc) in out.increments.iter_mut().enumerate() {
        let f = (sign * alpha * path.grid.time(m)).exp();
        inc.iter_mut().for_each(|c| *c *= f);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    fn diag(l: Vec<f64>, alpha: f64) -> SemigroupRep {
        let space = Arc::new(SpaceSpec::euclidean(l.len()).unwrap());
        SemigroupRep::diagonal(l, alpha, space).unwrap()
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(SpaceSpec::new(vec![1.0, 0.0], "bad").is_err());
        assert!(SpaceSpec::new(vec![], "empty").is_err());
        let s = SpaceSpec::new(vec![2.0, 3.0], "w").unwrap();
        assert_eq!(s.norm_sq(&[1.0, 1.0]), 5.0);
    }

    #[test]
    fn diagonal_identity_at_zero_and_half_at_ln2() {
        let rep = diag(vec![1.0, 4.0], 0.0);
        let x = StateVector::new(vec![1.0, 1.0], rep.space().clone()).unwrap();
        assert_eq!(rep.apply(0.0, &x).unwrap().coords(), &[1.0, 1.0]);
        let e = StateVector::new(vec![1.0, 0.0], rep.space().clone()).unwrap();
        let y = rep.apply(LN_2, &e).unwrap();
        assert_abs_diff_eq!(y.coords()[0], 0.5, epsilon = 1e-15);
        assert_eq!(y.coords()[1], 0.0);
    }

    #[test]
    fn hyperbolic_quarter_rotation() {
        let space = Arc::new(SpaceSpec::euclidean(2).unwrap());
        let rep = SemigroupRep::hyperbolic(&[1.0], 0.0, space.clone()).unwrap();
        let x = StateVector::new(vec![1.0, 0.0], space).unwrap();
        let y = rep.apply(FRAC_PI_2, &x).unwrap();
        assert_abs_diff_eq!(y.coords()[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y.coords()[1], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn hyperbolic_zero_frequency_is_free_particle() {
        let space = Arc::new(SpaceSpec::euclidean(2).unwrap());
        let rep = SemigroupRep::hyperbolic(&[0.0], 0.0, space.clone()).unwrap();
        let x = StateVector::new(vec![1.0, 2.0], space).unwrap();
        let y = rep.apply(3.0, &x).unwrap();
        assert_eq!(y.coords(), &[7.0, 2.0]);
    }

    #[test]
    fn negative_time_and_mismatch_rejected() {
        let rep = diag(vec![1.0, 4.0], 0.0);
        let x = StateVector::new(vec![1.0, 1.0], rep.space().clone()).unwrap();
        assert!(matches!(rep.apply(-1.0, &x), Err(Error::NegativeTime(_))));
        let other = Arc::new(SpaceSpec::euclidean(3).unwrap());
        let z = StateVector::zeros(other);
        assert!(matches!(rep.apply(1.0, &z), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn dense_matches_diagonal() {
        let space = Arc::new(SpaceSpec::euclidean(2).unwrap());
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -4.0]);
        let dense = SemigroupRep::dense(a, 0.0, space.clone()).unwrap();
        let d = diag(vec![1.0, 4.0], 0.0);
        let x = StateVector::new(vec![0.3, -0.7], space.clone()).unwrap();
        let y1 = dense.apply(0.37, &x).unwrap();
        let x2 = StateVector::new(vec![0.3, -0.7], d.space().clone()).unwrap();
        let y2 = d.apply(0.37, &x2).unwrap();
        for (a, b) in y1.coords().iter().zip(y2.coords()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn audit_examples() {
        let rep = diag(vec![1.0, 4.0], 0.0);
        let a = semigroup_contraction_audit(&rep, 2.0, 200, 1).unwrap();
        assert!(a.pass && a.max_ratio <= 1.0);

        let bad = diag(vec![1.0], -2.0);
        assert!(!semigroup_contraction_audit(&bad, 1.0, 50, 1).unwrap().pass);

        let l = [1.0, 4.0, 9.0];
        let space = Arc::new(SpaceSpec::hyperbolic_energy(&l, 1).unwrap());
        let wave = SemigroupRep::hyperbolic(&l, 0.0, space).unwrap();
        let a = semigroup_contraction_audit(&wave, 5.0, 200, 3).unwrap();
        assert!(a.pass);
        assert_abs_diff_eq!(a.max_ratio, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn propagator_cache_reuses() {
        let rep = diag(vec![1.0], 0.0);
        let p1 = rep.propagator(0.1).unwrap();
        let p2 = rep.propagator(0.1).unwrap();
        assert!(Arc::ptr_eq(&p1, &p2));
    }

    #[test]
    fn shift_scales_action() {
        let rep = diag(vec![1.0], 0.0).shifted(-2.0);
        assert_eq!(rep.alpha(), -2.0);
        let x = StateVector::new(vec![1.0], rep.space().clone()).unwrap();
        assert_abs_diff_eq!(rep.apply(1.0, &x).unwrap().coords()[0], (-3.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn log_norm_of_diagonal() {
        let space = SpaceSpec::new(vec![1.0, 5.0], "w").unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -4.0]);
        assert_abs_diff_eq!(logarithmic_norm(&a, &space), -1.0, epsilon = 1e-12);
    }
}
