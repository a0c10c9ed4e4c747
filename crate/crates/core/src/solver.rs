//! Backward (resolvent) drift steps, the deterministic inner equation, the Picard
//! iteration that builds the mild solution, and an independent one-pass scheme.

use serde::Serialize;

use crate::coefficients::{DriftCoefficient, DriftKind, SystemSpec};
use crate::convolution::stochastic_convolution;
use crate::error::{Error, Result};
use crate::hilbert::{SpaceSpec, StateVector};
use crate::noise::{assemble_increments, IncrementAssembler, NoisePath, TimeGrid};
use crate::path::{sup_distance, SimulationPath, StepDiagnostics};

const MAX_ITER: usize = 10_000;
const REL_TOL: f64 = 1e-10;

/// Solver for `y - h f(t, y) = b` that keeps its scratch buffers between calls.
pub struct Resolvent<'a> {
    f: &'a DriftCoefficient,
    space: &'a SpaceSpec,
    fy: Vec<f64>,
    r: Vec<f64>,
    probe: Vec<f64>,
}

impl<'a> Resolvent<'a> {
    pub fn new(f: &'a DriftCoefficient, space: &'a SpaceSpec) -> Self {
        let j = space.dim();
        Resolvent {
            f,
            space,
            fy: vec![0.0; j],
            r: vec![0.0; j],
            probe: vec![0.0; j],
        }
    }

    /// Writes the solution into `y` and returns the iteration count.
    pub fn solve(&mut self, t: f64, h: f64, b: &[f64], y: &mut [f64]) -> Result<u32> {
        if !(h >= 0.0) {
            return Err(Error::invalid("solver", format!("step must be >= 0, got {h}")));
        }
        let m = self.f.monotonicity();
        let margin = 1.0 - h * m;
        if margin <= 0.0 {
            return Err(Error::StepTooLarge { h, m });
        }
        y.copy_from_slice(b);
        if h == 0.0 {
            return Ok(0);
        }
        let tol = REL_TOL * (1.0 + self.space.norm(b));
        match self.f.kind() {
            DriftKind::Separable(phi) => {
                // |r_i| <= tol / sqrt(sum w) for every i gives ||r|| <= tol
                let tol_c = tol / self.space.total_weight().sqrt();
                let mut total = 0u32;
                for (i, (yi, bi)) in y.iter_mut().zip(b).enumerate() {
                    let g = |z: f64| z - h * phi(t, i, z) - bi;
                    let (root, it) = scalar_root(g, *bi, margin, tol_c)?;
                    *yi = root;
                    total = total.max(it);
                }
                Ok(total)
            }
            DriftKind::General(_) => self.damped_fixed_point(t, h, b, y, tol, margin),
        }
    }

    fn residual(&mut self, t: f64, h: f64, b: &[f64], y: &[f64]) -> f64 {
        self.f.eval_into(t, y, &mut self.fy);
        for ((r, (yi, fi)), bi) in self.r.iter_mut().zip(y.iter().zip(&self.fy)).zip(b) {
            *r = yi - h * fi - bi;
        }
        self.space.norm(&self.r)
    }

    fn damped_fixed_point(&mut self, t: f64, h: f64, b: &[f64], y: &mut [f64], tol: f64, margin: f64) -> Result<u32> {
        let mut res = self.residual(t, h, b, y);
        if res <= tol {
            return Ok(0);
        }
        // local Lipschitz estimate along the residual direction
        let eps = 1e-6 * (1.0 + self.space.norm(b)) / res;
        let base = self.fy.clone();
        for ((p, yi), ri) in self.probe.iter_mut().zip(y.iter()).zip(&self.r) {
            *p = yi + eps * ri;
        }
        let mut fp = vec![0.0; y.len()];
        self.f.eval_into(t, &self.probe, &mut fp);
        let lip = self.space.dist_sq(&fp, &base).sqrt() / (eps * res);
        let mut tau = 1.0 / (1.0 + h * lip.max(0.0));
        let mut prev = y.to_vec();
        for it in 1..=MAX_ITER {
            prev.copy_from_slice(y);
            for (yi, ri) in y.iter_mut().zip(&self.r) {
                *yi -= tau * ri;
            }
            let new_res = self.residual(t, h, b, y);
            if new_res <= tol {
                return Ok(it as u32);
            }
            if !(new_res < res) {
                y.copy_from_slice(&prev);
                tau *= 0.5;
                res = self.residual(t, h, b, y);
                if tau < 1e-12 {
                    return Err(Error::ResolventNonConvergence {
                        iterations: it,
                        residual: res,
                        margin,
                    });
                }
            } else {
                res = new_res;
            }
        }
        Err(Error::ResolventNonConvergence {
            iterations: MAX_ITER,
            residual: res,
            margin,
        })
    }
}

/// Root of the strictly increasing `g` near `start`, where
/// `(g(a) - g(b)) / (a - b) >= margin > 0`. Illinois-modified regula falsi on the bracket
/// implied by that slope bound.
fn scalar_root(g: impl Fn(f64) -> f64, start: f64, margin: f64, tol: f64) -> Result<(f64, u32)> {
    let g0 = g(start);
    if !g0.is_finite() {
        return Err(Error::ResolventNonConvergence {
            iterations: 0,
            residual: g0,
            margin,
        });
    }
    if g0.abs() <= tol {
        return Ok((start, 0));
    }
    let mut other = start - g0 / margin;
    let mut g_other = g(other);
    let mut it = 1u32;
    // a wrongly declared constant may leave the root outside; widen until bracketed
    while g_other.signum() == g0.signum() && g_other.abs() > tol {
        other = start + 2.0 * (other - start);
        g_other = g(other);
        it += 1;
        if it > 60 || !g_other.is_finite() {
            return Err(Error::ResolventNonConvergence {
                iterations: it as usize,
                residual: g_other,
                margin,
            });
        }
    }
    if g_other.abs() <= tol {
        return Ok((other, it));
    }
    let (mut a, mut ga, mut b, mut gb) = (start, g0, other, g_other);
    let mut side = 0i8;
    while (it as usize) < MAX_ITER {
        it += 1;
        let c = (a * gb - b * ga) / (gb - ga);
        let c = if c.is_finite() && (c - a) * (c - b) <= 0.0 { c } else { 0.5 * (a + b) };
        let gc = g(c);
        if gc.abs() <= tol || c == a || c == b {
            return Ok((c, it));
        }
        if gc.signum() == gb.signum() {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::ResolventNonConvergence {
        iterations: MAX_ITER,
        residual: ga.abs().min(gb.abs()),
        margin,
    })
}

/// `y` with `y - h f(t, y) = b`; requires `h M < 1`. The residual is at most
/// `1e-10 (1 + ||b||)`.
pub fn resolvent_step(f: &DriftCoefficient, t: f64, h: f64, b: &StateVector) -> Result<StateVector> {
    let space = b.space().clone();
    let mut y = vec![0.0; b.dim()];
    Resolvent::new(f, &space).solve(t, h, b.coords(), &mut y)?;
    StateVector::new(y, space)
}

/// Solves `X_t = S_t X0 + int_0^t S_{t-s} f(s, X_s) ds + V_t` on the grid by
/// `X_{n+1} = R(t_{n+1}, dt, S_dt X_n + V_{n+1} - S_dt V_n)`.
///
/// Checks `||X_t|| <= e^{alpha t}||X0|| + ||V_t|| + int_0^t e^{(alpha+M)(t-s)} ||f(s, S_s X0 + V_s)|| ds`
/// with 10% slack along the way.
pub fn inner_deterministic_solve(
    sys: &SystemSpec,
    v: &[Vec<f64>],
    x0: &StateVector,
    grid: &TimeGrid,
) -> Result<(Vec<Vec<f64>>, StepDiagnostics)> {
    let n = grid.n_steps;
    if v.len() != n + 1 {
        return Err(Error::invalid(
            "solver",
            format!("V has {} states, grid needs {}", v.len(), n + 1),
        ));
    }
    let space = sys.space();
    space.check(x0.dim())?;
    let j = space.dim();
    let dt = grid.dt();
    let prop = sys.semigroup.propagator(dt)?;
    let mut res = Resolvent::new(&sys.f, space);
    let growth = ((sys.alpha() + sys.m()) * dt).exp();
    let alpha = sys.alpha();

    let mut states = Vec::with_capacity(n + 1);
    states.push(x0.coords().to_vec());
    let mut diag = StepDiagnostics {
        resolvent_iterations: Vec::with_capacity(n),
        apriori_max_ratio: 0.0,
    };
    let x0_norm = space.norm(x0.coords());
    let mut free = x0.coords().to_vec();
    let mut free_next = vec![0.0; j];
    let mut z = vec![0.0; j];
    let mut fz = vec![0.0; j];
    let mut integral = 0.0;
    let mut sx = vec![0.0; j];
    let mut sv = vec![0.0; j];
    for m in 0..n {
        let t_next = grid.time(m + 1);
        // a-priori bound bookkeeping with the left-point integral
        z.iter_mut()
            .zip(free.iter().zip(&v[m]))
            .for_each(|(zi, (a, b))| *zi = a + b);
        sys.f.eval_into(grid.time(m), &z, &mut fz);
        integral = growth * (integral + space.norm(&fz) * dt);
        prop.apply(&free, &mut free_next);
        std::mem::swap(&mut free, &mut free_next);

        prop.apply(&states[m], &mut sx);
        prop.apply(&v[m], &mut sv);
        let mut b = vec![0.0; j];
        for i in 0..j {
            b[i] = sx[i] + (v[m + 1][i] - sv[i]);
        }
        let mut y = vec![0.0; j];
        let it = res.solve(t_next, dt, &b, &mut y)?;
        diag.resolvent_iterations.push(it);

        let bound = (alpha * t_next).exp() * x0_norm + space.norm(&v[m + 1]) + integral;
        let norm = space.norm(&y);
        if norm > 0.0 {
            let ratio = if bound > 0.0 { norm / bound } else { f64::INFINITY };
            diag.apriori_max_ratio = diag.apriori_max_ratio.max(ratio);
            if ratio > 1.1 {
                return Err(Error::AprioriBoundViolated { time: t_next, ratio });
            }
        }
        states.push(y);
    }
    Ok((states, diag))
}

/// Outcome of [`picard_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub path: SimulationPath,
    /// `h^n = sup_t ||X^{n+1}_t - X^n_t||` for `n = 0, 1, ...` (`X^0_t = S_t X0`).
    pub iterate_sup_distances: Vec<f64>,
    /// Resolvent iterations per step in the final round.
    pub inner_solver_stats: Vec<u32>,
    pub converged: bool,
    /// Number of iterates `X^1, X^2, ...` computed.
    pub rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardSettings {
    pub tol: f64,
    pub max_rounds: usize,
    /// Keep iterating until `max_rounds` even after the tolerance is met.
    pub run_all_rounds: bool,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings {
            tol: 1e-6,
            max_rounds: 12,
            run_all_rounds: false,
        }
    }
}

/// Picard iteration on one noise realisation: `X^0_t = S_t X0`; round `n` builds
/// `V^n` from the left-point values of `X^{n-1}` and solves the inner equation for `X^n`.
/// The same noise drives every round. Stops once `sup_t ||X^n - X^{n-1}|| < tol`.
pub fn picard_solve(
    sys: &SystemSpec,
    x0: &StateVector,
    noise: &NoisePath,
    settings: &PicardSettings,
) -> Result<SolveReport> {
    if !(settings.tol > 0.0) || settings.max_rounds == 0 {
        return Err(Error::invalid("solver", "need tol > 0 and max_rounds >= 1"));
    }
    let grid = noise.grid;
    let space = sys.space();
    space.check(x0.dim())?;
    let prop = sys.semigroup.propagator(grid.dt())?;
    let mut prev = Vec::with_capacity(grid.n_steps + 1);
    prev.push(x0.coords().to_vec());
    for m in 0..grid.n_steps {
        let mut next = vec![0.0; space.dim()];
        prop.apply(&prev[m], &mut next);
        prev.push(next);
    }

    let mut distances = Vec::new();
    let mut converged = false;
    let mut last_diag = StepDiagnostics::default();
    let mut last_dz = Vec::new();
    let mut rounds = 0;
    while rounds < settings.max_rounds {
        rounds += 1;
        let inc = assemble_increments(sys, &prev, noise)?;
        let v = stochastic_convolution(&sys.semigroup, &inc.dz, &grid)?;
        let (next, diag) = inner_deterministic_solve(sys, &v, x0, &grid)?;
        let d = sup_distance(space, &next, &prev);
        distances.push(d);
        prev = next;
        last_diag = diag;
        last_dz = inc.dz;
        if d < settings.tol {
            converged = true;
            if !settings.run_all_rounds {
                break;
            }
        }
    }
    if !converged {
        log::warn!(
            "picard_solve: no convergence after {rounds} rounds (last distance {:e})",
            distances.last().copied().unwrap_or(f64::NAN)
        );
    }
    let mut path = SimulationPath::new(grid, space.clone(), prev);
    path.increments = last_dz;
    path.diagnostics = last_diag.clone();
    Ok(SolveReport {
        path,
        iterate_sup_distances: distances,
        inner_solver_stats: last_diag.resolvent_iterations,
        converged,
        rounds,
    })
}

/// One-pass semi-implicit exponential Euler scheme:
/// `X_{n+1} = R(t_{n+1}, dt, S_dt X_n + dZ_n)` with `dZ_n` from the left-point coefficients.
/// Recorded increments are the martingale increments `dZ_n`.
pub fn direct_solve(sys: &SystemSpec, x0: &StateVector, noise: &NoisePath) -> Result<SimulationPath> {
    let grid = noise.grid;
    let space = sys.space();
    space.check(x0.dim())?;
    let j = space.dim();
    let dt = grid.dt();
    let prop = sys.semigroup.propagator(dt)?;
    let mut res = Resolvent::new(&sys.f, space);
    let mut asm = IncrementAssembler::new(sys, noise)?;
    let mut states = Vec::with_capacity(grid.n_steps + 1);
    let mut increments = Vec::with_capacity(grid.n_steps);
    let mut iters = Vec::with_capacity(grid.n_steps);
    states.push(x0.coords().to_vec());
    let mut sx = vec![0.0; j];
    for m in 0..grid.n_steps {
        let mut dz = vec![0.0; j];
        asm.step(m, &states[m], &mut dz);
        prop.apply(&states[m], &mut sx);
        let b: Vec<f64> = sx.iter().zip(&dz).map(|(a, d)| a + d).collect();
        let mut y = vec![0.0; j];
        iters.push(res.solve(grid.time(m + 1), dt, &b, &mut y)?);
        states.push(y);
        increments.push(dz);
    }
    let mut path = SimulationPath::new(grid, space.clone(), states);
    path.increments = increments;
    path.diagnostics.resolvent_iterations = iters;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{DiffusionCoefficient, JumpCoefficient};
    use crate::hilbert::SemigroupRep;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn line() -> Arc<SpaceSpec> {
        Arc::new(SpaceSpec::euclidean(1).unwrap())
    }

    fn scalar(x: f64) -> StateVector {
        StateVector::new(vec![x], line()).unwrap()
    }

    #[test]
    fn resolvent_examples() {
        let cubic = DriftCoefficient::separable(0.0, |_, _, a| -a * a * a);
        assert_eq!(resolvent_step(&cubic, 0.0, 0.0, &scalar(2.0)).unwrap().coords()[0], 2.0);
        assert_abs_diff_eq!(resolvent_step(&cubic, 0.0, 1.0, &scalar(2.0)).unwrap().coords()[0], 1.0, epsilon = 1e-10);
        let lin = DriftCoefficient::separable(0.0, |_, _, a| -a);
        assert_abs_diff_eq!(resolvent_step(&lin, 0.0, 0.5, &scalar(3.0)).unwrap().coords()[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn general_resolvent_matches_separable() {
        let g = DriftCoefficient::general(0.0, |_, x, out| out[0] = -x[0] * x[0] * x[0]);
        assert_abs_diff_eq!(resolvent_step(&g, 0.0, 1.0, &scalar(2.0)).unwrap().coords()[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn resolvent_rejects_large_steps() {
        let f = DriftCoefficient::separable(2.0, |_, _, a| 2.0 * a);
        assert!(matches!(
            resolvent_step(&f, 0.0, 0.5, &scalar(1.0)),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn resolvent_handles_cube_root() {
        // -cbrt(y) + y is semimonotone with M = 1 but not Lipschitz at 0
        let f = DriftCoefficient::separable(1.0, |_, _, a| -a.cbrt() + a);
        for b in [-3.0, -1e-6, 0.0, 1e-9, 0.5, 4.0] {
            let y = resolvent_step(&f, 0.0, 0.1, &scalar(b)).unwrap().coords()[0];
            let r = y - 0.1 * (-y.cbrt() + y) - b;
            assert!(r.abs() <= 1e-10 * (1.0 + b.abs()), "b={b} r={r}");
        }
    }

    fn identity_system(f: DriftCoefficient) -> SystemSpec {
        SystemSpec {
            label: "ode".into(),
            semigroup: SemigroupRep::diagonal(vec![0.0], 0.0, line()).unwrap(),
            f,
            g: DiffusionCoefficient::zero(1),
            k: JumpCoefficient::zero(),
            c: 0.0,
            d: 1.0,
            probe_radius: 2.0,
        }
    }

    #[test]
    fn inner_solve_without_drift_telescopes() {
        let space = line();
        let sys = SystemSpec {
            semigroup: SemigroupRep::diagonal(vec![2.0], 0.0, space).unwrap(),
            ..identity_system(DriftCoefficient::zero())
        };
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let v: Vec<Vec<f64>> = (0..=20).map(|n| vec![(n as f64 * 0.37).sin()]).collect();
        let (x, _) = inner_deterministic_solve(&sys, &v, &scalar(1.5), &grid).unwrap();
        for n in 0..=20 {
            let exact = 1.5 * (-2.0 * grid.time(n)).exp() + v[n][0];
            assert_abs_diff_eq!(x[n][0], exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn inner_solve_linear_decay() {
        let sys = identity_system(DriftCoefficient::separable(0.0, |_, _, a| -a));
        let grid = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let v = vec![vec![0.0]; 1001];
        let (x, _) = inner_deterministic_solve(&sys, &v, &scalar(1.0), &grid).unwrap();
        // backward Euler: (1 + dt)^{-n}
        assert_abs_diff_eq!(x[1000][0], (1.0f64 + 1e-3).powi(-1000), epsilon = 1e-12);
        assert!((x[1000][0] - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn deterministic_direct_equals_inner() {
        let sys = identity_system(DriftCoefficient::separable(0.0, |_, _, a| -a * a * a));
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let noise = NoisePath::zero(&grid, 1);
        let direct = direct_solve(&sys, &scalar(1.0), &noise).unwrap();
        let (inner, _) = inner_deterministic_solve(&sys, &vec![vec![0.0]; 101], &scalar(1.0), &grid).unwrap();
        assert_eq!(direct.states, inner);
    }

    #[test]
    fn picard_deterministic_reaches_fixed_point_immediately() {
        let sys = identity_system(DriftCoefficient::separable(0.0, |_, _, a| -a));
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let noise = NoisePath::zero(&grid, 1);
        let r = picard_solve(&sys, &scalar(1.0), &noise, &PicardSettings::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.rounds, 2);
        assert_eq!(r.iterate_sup_distances[1], 0.0);
    }

    #[test]
    fn picard_rejects_bad_settings() {
        let sys = identity_system(DriftCoefficient::zero());
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let noise = NoisePath::zero(&grid, 1);
        let s = PicardSettings {
            tol: 0.0,
            ..Default::default()
        };
        assert!(picard_solve(&sys, &scalar(1.0), &noise, &s).is_err());
    }
}
