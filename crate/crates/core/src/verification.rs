//! Ensemble checks: the pathwise Ito-type inequality and the maximal inequality on
//! solved paths, continuity in data and coefficients, exponential stability, the Markov
//! property, and the factorial contraction of Picard iterates.

use serde::Serialize;

use crate::coefficients::{DiffusionCoefficient, SystemSpec};
use crate::convolution::{ito_residual, kotelenez_statistic, stochastic_convolution, KotelenezReport, MaximalSample};
use crate::ensemble::{bootstrap, map_paths, mean_se, ols_slope};
use crate::error::{Error, Result};
use crate::hilbert::StateVector;
use crate::noise::{assemble_increments, sample_noise, stream_id, NoisePath, TimeGrid};
use crate::path::SimulationPath;
use crate::scenarios::Scenario;
use crate::solver::{direct_solve, picard_solve, PicardSettings, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Picard,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub grid: TimeGrid,
    /// Burkholder-Davis-Gundy constant used in every derived bound.
    pub bdg_c1: f64,
    /// Multiplier on standard errors in pass/fail decisions.
    pub confidence: f64,
    pub workers: usize,
    pub solver: SolverKind,
    pub picard: PicardSettings,
}

impl EnsembleConfig {
    pub fn new(n_paths: usize, seed: u64, grid: TimeGrid) -> Self {
        EnsembleConfig {
            n_paths,
            seed,
            grid,
            bdg_c1: 2.0,
            confidence: 4.0,
            workers: 1,
            solver: SolverKind::Direct,
            picard: PicardSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 100 {
            return Err(Error::invalid(
                "verification",
                format!("ensembles need at least 100 paths, got {}", self.n_paths),
            ));
        }
        if !(self.bdg_c1 > 0.0 && self.confidence > 0.0) {
            return Err(Error::invalid("verification", "bdg_c1 and confidence must be > 0"));
        }
        Ok(())
    }

    /// Noise for path `path` of arm `arm` on `grid`.
    pub fn noise(&self, sys: &SystemSpec, grid: &TimeGrid, arm: u32, path: usize) -> NoisePath {
        sample_noise(
            grid,
            sys.g.wiener_dim(),
            sys.k.intensity(),
            self.seed,
            stream_id(arm, path as u32),
        )
    }

    pub fn solve(&self, sys: &SystemSpec, x0: &StateVector, noise: &NoisePath) -> Result<SimulationPath> {
        match self.solver {
            SolverKind::Direct => direct_solve(sys, x0, noise),
            SolverKind::Picard => Ok(picard_solve(sys, x0, noise, &self.picard)?.path),
        }
    }
}

/// Pathwise Ito-type residual of a solved path, relative to its energy scale.
///
/// The semimartingale increments are `dZ_m = dt f(t_{m+1}, X_{m+1}) + dM_m` with `dM`
/// the martingale increments at the left points; `d[Z]_m` uses the predictable Wiener
/// part `dt ||g||_HS^2` and exact per-jump `||k||^2`. Jumps sharing a step are taken in
/// time order, so each later one sees the earlier ones in its left limit; their pairwise
/// terms `2<k_i, k_l>` enter the integral against `dZ`.
pub fn path_ito_residual(sys: &SystemSpec, x0: &StateVector, path: &SimulationPath, noise: &NoisePath) -> Result<f64> {
    let grid = noise.grid;
    let inc = assemble_increments(sys, &path.states, noise)?;
    let dt = grid.dt();
    let j = sys.dim();
    let mut fx = vec![0.0; j];
    let dz: Vec<Vec<f64>> = inc
        .dz
        .iter()
        .enumerate()
        .map(|(m, d)| {
            sys.f.eval_into(grid.time(m + 1), &path.states[m + 1], &mut fx);
            d.iter().zip(&fx).map(|(a, b)| a + dt * b).collect()
        })
        .collect();
    let dqv: Vec<f64> = inc
        .realized_qv
        .windows(2)
        .zip(&inc.jump_cross)
        .map(|(w, c)| w[1] - w[0] + c)
        .collect();
    Ok(ito_residual(&sys.semigroup, x0, &dz, &dqv, &grid)?.relative_min())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItoLevel {
    pub dt: f64,
    /// `min` over paths of `min_t residual / energy scale`.
    pub min_relative: f64,
    /// `max(0, -min_relative)`.
    pub floor: f64,
    pub mean_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItoReport {
    /// Finest grid first.
    pub levels: Vec<ItoLevel>,
    pub tolerance: f64,
    pub monotone: bool,
    pub pass: bool,
}

/// Ito-type residuals on the configured grid and on grids coarsened by each of
/// `coarsen_by` (matched noise). Passes iff the finest floor is within `tolerance` and the
/// floor does not grow under refinement.
pub fn ito_check(
    sys: &SystemSpec,
    x0: &StateVector,
    cfg: &EnsembleConfig,
    coarsen_by: &[usize],
    tolerance: f64,
) -> Result<ItoReport> {
    cfg.validate()?;
    let per_path = map_paths(cfg.n_paths, cfg.workers, |i| {
        let fine = cfg.noise(sys, &cfg.grid, 0, i);
        let mut out = Vec::with_capacity(coarsen_by.len() + 1);
        for &factor in std::iter::once(&1).chain(coarsen_by) {
            let noise = if factor == 1 { fine.clone() } else { fine.coarsen(factor)? };
            let path = cfg.solve(sys, x0, &noise)?;
            out.push(path_ito_residual(sys, x0, &path, &noise)?);
        }
        Ok(out)
    })?;
    let levels: Vec<ItoLevel> = std::iter::once(1)
        .chain(coarsen_by.iter().copied())
        .enumerate()
        .map(|(l, factor)| {
            let vals: Vec<f64> = per_path.iter().map(|p| p[l]).collect();
            let min_relative = vals.iter().copied().fold(f64::INFINITY, f64::min);
            ItoLevel {
                dt: cfg.grid.dt() * factor as f64,
                min_relative,
                floor: (-min_relative).max(0.0),
                mean_relative: mean_se(&vals).0,
            }
        })
        .collect();
    let mut sorted = levels.clone();
    sorted.sort_by(|a, b| a.dt.total_cmp(&b.dt));
    let monotone = sorted.windows(2).all(|w| w[0].floor <= w[1].floor);
    let pass = levels[0].min_relative >= -tolerance && monotone;
    Ok(ItoReport {
        levels,
        tolerance,
        monotone,
        pass,
    })
}

/// Maximal-inequality ratio `E sup ||V||^2 / (e^{4 alpha T} E<M>_T)` where `V` is the
/// stochastic convolution of the martingale part along solved paths.
pub fn kotelenez_check(sys: &SystemSpec, x0: &StateVector, cfg: &EnsembleConfig, constant: f64) -> Result<KotelenezReport> {
    cfg.validate()?;
    let samples = map_paths(cfg.n_paths, cfg.workers, |i| {
        let noise = cfg.noise(sys, &cfg.grid, 0, i);
        let path = cfg.solve(sys, x0, &noise)?;
        let inc = assemble_increments(sys, &path.states, &noise)?;
        let v = stochastic_convolution(&sys.semigroup, &inc.dz, &cfg.grid)?;
        Ok(MaximalSample::from_path(
            &sys.semigroup,
            &v,
            *inc.predictable_qv.last().expect("non-empty"),
        ))
    })?;
    kotelenez_statistic(
        sys.alpha(),
        cfg.grid.horizon(),
        &samples,
        constant,
        200,
        0.95,
        cfg.seed ^ 0x6b6f74,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    /// `lhs / rhs` (0 when both vanish).
    pub ratio: f64,
    pub c1: f64,
    pub c2: f64,
    pub pass: bool,
}

/// `E sup_t e^{-2 alpha t}||X^1_t - X^0_t||^2` against
/// `e^{C_1 T}[2 E||X^1_0 - X^0_0||^2 + 2 int e^{-2 alpha t} E||f_1 - f_0||^2
///  + C_2 int e^{-2 alpha t} E||g_1 - g_0||_HS^2 + C_2 int int e^{-2 alpha t} E||k_1 - k_0||^2 nu]`
/// with coefficient differences along `X^0`, `C_1 = 4M + 2 + C(8 c1^2 + 4)`,
/// `C_2 = 8 c1^2 + 4`. Both systems share the noise of each path.
pub fn continuity_gap(
    sys0: &SystemSpec,
    sys1: &SystemSpec,
    x0_0: &StateVector,
    x0_1: &StateVector,
    cfg: &EnsembleConfig,
) -> Result<ContinuityReport> {
    cfg.validate()?;
    if sys0.m() != sys1.m() || sys0.c != sys1.c || sys0.d != sys1.d {
        return Err(Error::Verification(format!(
            "systems must declare the same constants (M {} vs {}, C {} vs {}, D {} vs {})",
            sys0.m(),
            sys1.m(),
            sys0.c,
            sys1.c,
            sys0.d,
            sys1.d
        )));
    }
    if sys0.semigroup != sys1.semigroup {
        return Err(Error::Verification("systems must share the semigroup".into()));
    }
    if sys0.k.intensity() != sys1.k.intensity() || sys0.g.wiener_dim() != sys1.g.wiener_dim() {
        return Err(Error::Verification("systems must share the driving noise".into()));
    }
    let c1sq = cfg.bdg_c1 * cfg.bdg_c1;
    let c1 = 4.0 * sys0.m() + 2.0 + sys0.c * (8.0 * c1sq + 4.0);
    let c2 = 8.0 * c1sq + 4.0;
    let alpha = sys0.alpha();
    let grid = cfg.grid;
    let dt = grid.dt();
    let space = sys0.space().clone();
    let j = space.dim();
    let kd = sys0.g.wiener_dim();
    let dx0 = space.dist_sq(x0_0.coords(), x0_1.coords());

    let per_path = map_paths(cfg.n_paths, cfg.workers, |i| {
        let noise = cfg.noise(sys0, &grid, 0, i);
        let p0 = cfg.solve(sys0, x0_0, &noise)?;
        let p1 = cfg.solve(sys1, x0_1, &noise)?;
        let mut lhs: f64 = 0.0;
        for (n, (a, b)) in p0.states.iter().zip(&p1.states).enumerate() {
            lhs = lhs.max((-2.0 * alpha * grid.time(n)).exp() * space.dist_sq(a, b));
        }
        let (mut f0, mut f1) = (vec![0.0; j], vec![0.0; j]);
        let (mut g0, mut g1) = (vec![0.0; j * kd], vec![0.0; j * kd]);
        let (mut k0, mut k1) = (vec![0.0; j], vec![0.0; j]);
        let (mut i_f, mut i_g, mut i_k) = (0.0, 0.0, 0.0);
        for (m, x) in p0.states.iter().take(grid.n_steps).enumerate() {
            let t = grid.time(m);
            let w = (-2.0 * alpha * t).exp() * dt;
            sys0.f.eval_into(t, x, &mut f0);
            sys1.f.eval_into(t, x, &mut f1);
            i_f += w * space.dist_sq(&f0, &f1);
            if kd > 0 {
                sys0.g.eval_into(t, x, &mut g0);
                sys1.g.eval_into(t, x, &mut g1);
                g0.iter_mut().zip(&g1).for_each(|(a, b)| *a -= b);
                i_g += w * DiffusionCoefficient::hs_norm_sq(&space, &g0);
            }
            for (mark, rate) in sys0.k.intensity().atoms() {
                sys0.k.eval_into(t, mark, x, &mut k0);
                sys1.k.eval_into(t, mark, x, &mut k1);
                i_k += w * rate * space.dist_sq(&k0, &k1);
            }
        }
        Ok((lhs, 2.0 * dx0 + 2.0 * i_f + c2 * i_g + c2 * i_k))
    })?;
    let scale = (c1 * grid.horizon()).exp();
    let lhs_v: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let rhs_v: Vec<f64> = per_path.iter().map(|p| scale * p.1).collect();
    let (lhs, lhs_se) = mean_se(&lhs_v);
    let (rhs, rhs_se) = mean_se(&rhs_v);
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
    let k = cfg.confidence;
    Ok(ContinuityReport {
        lhs,
        lhs_se,
        rhs,
        rhs_se,
        ratio,
        c1,
        c2,
        pass: lhs - k * lhs_se <= rhs + k * rhs_se,
    })
}

/// The shipped perturbations for [`continuity_gap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Perturbation {
    Identical,
    /// `X^1_0 = X^0_0 + delta e` with `||e|| = 1` along the first coordinate.
    InitialShift(f64),
    /// `f_1 = f_0 + c` in every coordinate.
    DriftShift(f64),
    /// `g_1 = s g_0`, `k_1 = s k_0`; both systems declare the constant `C max(1, s^2)`.
    NoiseScale(f64),
}

/// `(sys0, sys1, x0_0, x0_1)` for a perturbation of a scenario.
pub fn perturbed_pair(
    sc: &Scenario,
    p: Perturbation,
) -> Result<(SystemSpec, SystemSpec, StateVector, StateVector)> {
    let sys0 = sc.system.clone();
    let x0 = sc.x0.clone();
    Ok(match p {
        Perturbation::Identical => (sys0.clone(), sys0, x0.clone(), x0),
        Perturbation::InitialShift(delta) => {
            let mut x1 = x0.clone();
            x1.coords_mut()[0] += delta / sys0.space().weights()[0].sqrt();
            (sys0.clone(), sys0, x0, x1)
        }
        Perturbation::DriftShift(c) => {
            let mut sys1 = sys0.clone();
            sys1.f = sys0.f.plus_constant(vec![c; sys0.dim()]);
            (sys0, sys1, x0.clone(), x0)
        }
        Perturbation::NoiseScale(s) => {
            let mut a = sys0.clone();
            a.c *= s.max(1.0).powi(2);
            a.d *= s.max(1.0).powi(2);
            let mut b = a.clone();
            b.g = sys0.g.scaled(s);
            b.k = sys0.k.scaled(s);
            (a, b, x0.clone(), x0)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub gamma_bound: f64,
    pub fitted_rate: f64,
    pub fitted_rate_se: f64,
    pub initial_mean_sq: f64,
    pub final_mean_sq: f64,
    pub final_bound: f64,
    pub pass: bool,
}

/// Fits the decay rate of `E||X_t - Y_t||^2` (matched noise) over the second half of the
/// horizon and compares with `gamma = 2 alpha + 4M + 2 + C(8 c1^2 + 4)`.
///
/// When `gamma < 0` the check passes iff the fitted rate is negative with `confidence`
/// standard errors to spare and `E||X_T - Y_T||^2 <= 2 e^{gamma T} E||X_0 - Y_0||^2 (1 + slack)`.
/// When `gamma >= 0` there is nothing to check and the report passes.
pub fn stability_decay(
    sys: &SystemSpec,
    x0: &StateVector,
    y0: &StateVector,
    cfg: &EnsembleConfig,
    slack: f64,
) -> Result<StabilityReport> {
    cfg.validate()?;
    let space = sys.space().clone();
    if space.dist_sq(x0.coords(), y0.coords()) == 0.0 {
        return Err(Error::invalid("verification", "stability needs X0 != Y0"));
    }
    let gamma = sys.stability_exponent(cfg.bdg_c1);
    let grid = cfg.grid;
    let series = map_paths(cfg.n_paths, cfg.workers, |i| {
        let noise = cfg.noise(sys, &grid, 0, i);
        let px = cfg.solve(sys, x0, &noise)?;
        let py = cfg.solve(sys, y0, &noise)?;
        Ok(px
            .states
            .iter()
            .zip(&py.states)
            .map(|(a, b)| space.dist_sq(a, b))
            .collect::<Vec<f64>>())
    })?;
    let n = grid.n_steps;
    let start = n / 2;
    let ts: Vec<f64> = (start..=n).map(|k| grid.time(k)).collect();
    let fit = |idx: &mut dyn Iterator<Item = usize>, count: usize| -> Result<f64> {
        let mut mean = vec![0.0; n + 1 - start];
        for i in idx {
            for (m, v) in mean.iter_mut().zip(&series[i][start..]) {
                *m += v;
            }
        }
        let logs: Vec<f64> = mean.iter().map(|m| (m / count as f64).ln()).collect();
        if logs.iter().any(|l| !l.is_finite()) {
            return Err(Error::Verification("degenerate fit: non-positive mean squared gap".into()));
        }
        if logs.windows(2).all(|w| w[0] == w[1]) {
            return Err(Error::Verification("degenerate fit: constant series".into()));
        }
        Ok(ols_slope(&ts, &logs))
    };
    let n_paths = series.len();
    let fitted_rate = fit(&mut (0..n_paths), n_paths)?;
    let boot = bootstrap(n_paths, 200, cfg.seed ^ 0x737461, |idx| {
        fit(&mut idx.iter().copied(), n_paths).unwrap_or(f64::NAN)
    });
    let boot: Vec<f64> = boot.into_iter().filter(|b| b.is_finite()).collect();
    let fitted_rate_se = crate::ensemble::std_dev(&boot);
    let initial_mean_sq = series.iter().map(|s| s[0]).sum::<f64>() / n_paths as f64;
    let final_mean_sq = series.iter().map(|s| s[n]).sum::<f64>() / n_paths as f64;
    let final_bound = 2.0 * (gamma * grid.horizon()).exp() * initial_mean_sq * (1.0 + slack);
    let pass = if gamma < 0.0 {
        fitted_rate + cfg.confidence * fitted_rate_se < 0.0 && final_mean_sq <= final_bound
    } else {
        true
    };
    Ok(StabilityReport {
        gamma_bound: gamma,
        fitted_rate,
        fitted_rate_se,
        initial_mean_sq,
        final_mean_sq,
        final_bound,
        pass,
    })
}

/// Bounded continuous test functionals (catalog version 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctional {
    /// `exp(-||x||^2)`.
    Gaussian,
    /// `tanh(x_0)`.
    TanhFirst,
    /// `1 / (1 + exp((||x|| - 1) / 0.1))`, a smoothed indicator of the unit ball.
    SmoothBall,
}

impl TestFunctional {
    pub const CATALOG_VERSION: u32 = 1;
    pub const ALL: [TestFunctional; 3] = [TestFunctional::Gaussian, TestFunctional::TanhFirst, TestFunctional::SmoothBall];

    pub fn eval(&self, x: &StateVector) -> f64 {
        match self {
            TestFunctional::Gaussian => (-x.norm_sq()).exp(),
            TestFunctional::TanhFirst => x.coords()[0].tanh(),
            TestFunctional::SmoothBall => 1.0 / (1.0 + ((x.norm() - 1.0) / 0.1).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovReport {
    pub functional: TestFunctional,
    pub direct_mean: f64,
    pub twostage_mean: f64,
    pub z_score: f64,
    pub pass: bool,
}

/// Compares `E phi(X(r, x, t))` with `E phi(X(s, X(r, x, s), t))` where the second stage
/// runs on fresh noise, for every functional in `functionals`. Arms use disjoint streams.
#[allow(clippy::too_many_arguments)]
pub fn markov_test(
    sys: &SystemSpec,
    r: f64,
    s: f64,
    t: f64,
    x: &StateVector,
    functionals: &[TestFunctional],
    cfg: &EnsembleConfig,
) -> Result<Vec<MarkovReport>> {
    cfg.validate()?;
    if !(r <= s && s <= t && r < t) {
        return Err(Error::invalid(
            "verification",
            format!("need r <= s <= t and r < t, got r={r}, s={s}, t={t}"),
        ));
    }
    let dt = cfg.grid.dt();
    let whole = TimeGrid::with_step(r, t, dt)?;
    let first = if s > r { Some(TimeGrid::with_step(r, s, dt)?) } else { None };
    let second = if t > s { Some(TimeGrid::with_step(s, t, dt)?) } else { None };
    let nf = functionals.len();
    let values = map_paths(cfg.n_paths, cfg.workers, |i| {
        let noise = cfg.noise(sys, &whole, 0, i);
        let xd = cfg.solve(sys, x, &noise)?.last();
        let mut xs = x.clone();
        if let Some(g) = &first {
            xs = cfg.solve(sys, &xs, &cfg.noise(sys, g, 1, i))?.last();
        }
        if let Some(g) = &second {
            xs = cfg.solve(sys, &xs, &cfg.noise(sys, g, 2, i))?.last();
        }
        Ok(functionals
            .iter()
            .map(|phi| (phi.eval(&xd), phi.eval(&xs)))
            .collect::<Vec<_>>())
    })?;
    Ok((0..nf)
        .map(|f| {
            let a: Vec<f64> = values.iter().map(|v| v[f].0).collect();
            let b: Vec<f64> = values.iter().map(|v| v[f].1).collect();
            let (ma, sa) = mean_se(&a);
            let (mb, sb) = mean_se(&b);
            let se = (sa * sa + sb * sb).sqrt();
            let z = if se == 0.0 {
                if ma == mb {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (ma - mb) / se
            };
            MarkovReport {
                functional: functionals[f],
                direct_mean: ma,
                twostage_mean: mb,
                z_score: z,
                pass: z.abs() <= cfg.confidence,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardRateRow {
    pub n: usize,
    /// Ensemble mean of `sup_t ||X^{n+1}_t - X^n_t||^2`.
    pub h: f64,
    pub h_se: f64,
    /// `C_0 C_1^n T^n / n!`.
    pub bound: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardRateReport {
    pub c0: f64,
    pub c1: f64,
    pub bdg_c1: f64,
    pub rows: Vec<PicardRateRow>,
    pub all_within: bool,
}

impl PicardRateReport {
    /// `h^{n+1} / h^n` for each consecutive pair of rows.
    pub fn ratios(&self) -> Vec<(usize, f64)> {
        self.rows.windows(2).map(|w| (w[0].n, w[1].h / w[0].h)).collect()
    }
}

/// Tabulates the ensemble iterate distances against `C_0 C_1^n T^n / n!` with
/// `C_1 = 2C(1 + 2 c1^2) e^{4MT}` and `C_0` taken from the first round.
pub fn picard_rate_report(
    reports: &[SolveReport],
    sys: &SystemSpec,
    horizon: f64,
    bdg_c1: f64,
    confidence: f64,
) -> Result<PicardRateReport> {
    if reports.is_empty() {
        return Err(Error::Verification("no Picard reports".into()));
    }
    let rounds = reports.iter().map(|r| r.iterate_sup_distances.len()).min().unwrap_or(0);
    if rounds < 3 {
        return Err(Error::Verification(format!(
            "rate table needs at least 3 rounds per path, got {rounds}"
        )));
    }
    Ok(picard_rate_table(reports, sys, horizon, bdg_c1, confidence))
}

/// The table of [`picard_rate_report`] over however many rounds every path has.
pub fn picard_rate_table(
    reports: &[SolveReport],
    sys: &SystemSpec,
    horizon: f64,
    bdg_c1: f64,
    confidence: f64,
) -> PicardRateReport {
    let rounds = reports.iter().map(|r| r.iterate_sup_distances.len()).min().unwrap_or(0);
    let c1 = 2.0 * sys.c * (1.0 + 2.0 * bdg_c1 * bdg_c1) * (4.0 * sys.m() * horizon).exp();
    let mut rows = Vec::with_capacity(rounds);
    let mut c0 = 0.0;
    let mut factorial = 1.0;
    for n in 0..rounds {
        if n > 0 {
            factorial *= n as f64;
        }
        let hs: Vec<f64> = reports.iter().map(|r| r.iterate_sup_distances[n].powi(2)).collect();
        let (h, h_se) = mean_se(&hs);
        if n == 0 {
            c0 = h;
        }
        let bound = if n == 0 { c0 } else { c0 * (c1 * horizon).powi(n as i32) / factorial };
        rows.push(PicardRateRow {
            n,
            h,
            h_se,
            bound,
            within: h - confidence * h_se <= bound,
        });
    }
    PicardRateReport {
        c0,
        c1,
        bdg_c1,
        all_within: rows.iter().all(|r| r.within),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeGapLevel {
    pub dt: f64,
    /// Ensemble mean of `sup_t ||X^picard_t - X^direct_t||`.
    pub gap: f64,
    pub gap_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeGapReport {
    /// Finest grid first.
    pub levels: Vec<SchemeGapLevel>,
    /// `gap(dt) / gap(2 dt)` for consecutive levels, finest first.
    pub halving_ratios: Vec<f64>,
    /// Allowed relative deviation of each ratio from 1/2.
    pub tolerance: f64,
    pub pass: bool,
}

/// Picard against the direct scheme on the configured grid and on the grids coarsened by
/// `2, 4, ...` (`refinements` halvings, matched noise). Passes iff every halving ratio lies
/// within `0.5 (1 +- tolerance)`.
pub fn scheme_gap(
    sys: &SystemSpec,
    x0: &StateVector,
    cfg: &EnsembleConfig,
    refinements: usize,
    tolerance: f64,
) -> Result<SchemeGapReport> {
    cfg.validate()?;
    if refinements == 0 {
        return Err(Error::invalid("verification", "need at least one refinement"));
    }
    let factors: Vec<usize> = (0..=refinements).map(|l| 1usize << l).collect();
    let per_path = map_paths(cfg.n_paths, cfg.workers, |i| {
        let fine = cfg.noise(sys, &cfg.grid, 0, i);
        factors
            .iter()
            .map(|&f| {
                let noise = if f == 1 { fine.clone() } else { fine.coarsen(f)? };
                let picard = picard_solve(sys, x0, &noise, &cfg.picard)?;
                let direct = direct_solve(sys, x0, &noise)?;
                Ok(picard.path.sup_distance(&direct))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let levels: Vec<SchemeGapLevel> = factors
        .iter()
        .enumerate()
        .map(|(l, &f)| {
            let vals: Vec<f64> = per_path.iter().map(|p| p[l]).collect();
            let (gap, gap_se) = mean_se(&vals);
            SchemeGapLevel {
                dt: cfg.grid.dt() * f as f64,
                gap,
                gap_se,
            }
        })
        .collect();
    let halving_ratios: Vec<f64> = levels.windows(2).map(|w| w[0].gap / w[1].gap).collect();
    let pass = halving_ratios.iter().all(|r| (r / 0.5 - 1.0).abs() <= tolerance);
    Ok(SchemeGapReport {
        levels,
        halving_ratios,
        tolerance,
        pass,
    })
}

/// Runs Picard on `n_paths` paths of a scenario and returns the reports in path order.
pub fn picard_ensemble(sys: &SystemSpec, x0: &StateVector, cfg: &EnsembleConfig) -> Result<Vec<SolveReport>> {
    map_paths(cfg.n_paths, cfg.workers, |i| {
        let noise = cfg.noise(sys, &cfg.grid, 0, i);
        picard_solve(sys, x0, &noise, &cfg.picard)
    })
}
