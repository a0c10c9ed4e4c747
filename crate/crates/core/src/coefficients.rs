//! Drift, diffusion and jump coefficients with their declared constants, randomized
//! probes of the structural hypotheses, and the lifting constructions that turn
//! pointwise/scalar coefficients into coefficients on a truncated state space.
//!
//! The declared constants are
//!
//! * `M`: `<f(t,x) - f(t,y), x - y> <= M ||x - y||^2` (semimonotone drift),
//! * `C`: `||g(x) - g(y)||_HS^2 + sum_atoms rate ||k(xi,x) - k(xi,y)||^2 <= C ||x - y||^2`,
//! * `D`: `||f(x)||^2 + ||g(x)||_HS^2 + sum_atoms rate ||k(xi,x)||^2 <= D (1 + ||x||^2)`.
//!
//! Coefficients are opaque closures and must be continuous and free of hidden state.
//! `D` is only checked inside the probe box of radius `probe_radius`; cubic drifts have
//! no global linear-growth constant.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{logarithmic_norm, SemigroupRep, SpaceSpec, StateVector};

/// `(t, coordinate index, value) -> value`.
pub type ScalarFn = Arc<dyn Fn(f64, usize, f64) -> f64 + Send + Sync>;
/// `(t, x, out)`; writes `f(t, x)` into `out`.
pub type VectorFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, out)`; writes the `J x K` matrix `g(t, x)` column-major into `out`.
pub type MatrixFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, mark, x, out)`; writes `k(t, mark, x)` into `out`.
pub type JumpFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum DriftKind {
    /// Acts coordinate by coordinate: `f(t, x)_i = phi(t, i, x_i)`.
    Separable(ScalarFn),
    General(VectorFn),
}

/// Drift `f` with its semimonotonicity constant `M`.
#[derive(Clone)]
pub struct DriftCoefficient {
    kind: DriftKind,
    monotonicity: f64,
}

impl fmt::Debug for DriftCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DriftKind::Separable(_) => "separable",
            DriftKind::General(_) => "general",
        };
        f.debug_struct("DriftCoefficient")
            .field("kind", &kind)
            .field("M", &self.monotonicity)
            .finish()
    }
}

impl DriftCoefficient {
    pub fn separable(
        m: f64,
        phi: impl Fn(f64, usize, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        DriftCoefficient {
            kind: DriftKind::Separable(Arc::new(phi)),
            monotonicity: m,
        }
    }

    pub fn general(m: f64, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        DriftCoefficient {
            kind: DriftKind::General(Arc::new(f)),
            monotonicity: m,
        }
    }

    pub fn zero() -> Self {
        Self::separable(0.0, |_, _, _| 0.0)
    }

    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }

    /// Declared `M`.
    pub fn monotonicity(&self) -> f64 {
        self.monotonicity
    }

    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            DriftKind::Separable(phi) => {
                for (i, (o, xi)) in out.iter_mut().zip(x).enumerate() {
                    *o = phi(t, i, *xi);
                }
            }
            DriftKind::General(f) => f(t, x, out),
        }
    }

    pub fn eval(&self, t: f64, x: &StateVector) -> StateVector {
        let mut out = vec![0.0; x.dim()];
        self.eval_into(t, x.coords(), &mut out);
        StateVector::new(out, x.space().clone()).expect("same space")
    }

    /// `f + c` for a constant vector `c`; the semimonotonicity constant is unchanged.
    pub fn plus_constant(&self, c: Vec<f64>) -> Self {
        match &self.kind {
            DriftKind::Separable(phi) => {
                let phi = phi.clone();
                Self::separable(self.monotonicity, move |t, i, a| phi(t, i, a) + c[i])
            }
            DriftKind::General(f) => {
                let f = f.clone();
                Self::general(self.monotonicity, move |t, x, out| {
                    f(t, x, out);
                    out.iter_mut().zip(&c).for_each(|(o, ci)| *o += ci);
                })
            }
        }
    }

    /// `e^{-a t} f(t, e^{a t} x)`; keeps separability and `M`.
    pub fn tilted(&self, a: f64) -> Self {
        match &self.kind {
            DriftKind::Separable(phi) => {
                let phi = phi.clone();
                Self::separable(self.monotonicity, move |t, i, x| {
                    let e = (a * t).exp();
                    phi(t, i, e * x) / e
                })
            }
            DriftKind::General(f) => {
                let f = f.clone();
                Self::general(self.monotonicity, move |t, x, out| {
                    let e = (a * t).exp();
                    let y: Vec<f64> = x.iter().map(|c| c * e).collect();
                    f(t, &y, out);
                    out.iter_mut().for_each(|o| *o /= e);
                })
            }
        }
    }
}

/// Diffusion `g(t, x)`: a `J x K` matrix, i.e. a Hilbert-Schmidt map `R^K -> H`.
#[derive(Clone)]
pub struct DiffusionCoefficient {
    eval: Option<MatrixFn>,
    wiener_dim: usize,
}

impl fmt::Debug for DiffusionCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionCoefficient")
            .field("K", &self.wiener_dim)
            .field("zero", &self.eval.is_none())
            .finish()
    }
}

impl DiffusionCoefficient {
    pub fn new(wiener_dim: usize, g: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        DiffusionCoefficient {
            eval: Some(Arc::new(g)),
            wiener_dim,
        }
    }

    /// `g = 0` with `K` Wiener dimensions (the noise is still sampled).
    pub fn zero(wiener_dim: usize) -> Self {
        DiffusionCoefficient {
            eval: None,
            wiener_dim,
        }
    }

    pub fn wiener_dim(&self) -> usize {
        self.wiener_dim
    }

    pub fn is_zero(&self) -> bool {
        self.eval.is_none() || self.wiener_dim == 0
    }

    /// Column-major `J x K` matrix. Zero coefficients write zeros.
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.eval {
            Some(g) if self.wiener_dim > 0 => g(t, x, out),
            _ => out.fill(0.0),
        }
    }

    pub fn eval(&self, t: f64, x: &StateVector) -> DMatrix<f64> {
        let mut out = vec![0.0; x.dim() * self.wiener_dim];
        self.eval_into(t, x.coords(), &mut out);
        DMatrix::from_vec(x.dim(), self.wiener_dim, out)
    }

    /// `sum_i ||g e_i||^2` in the weighted norm.
    pub fn hs_norm_sq(space: &SpaceSpec, mat: &[f64]) -> f64 {
        let j = space.dim();
        mat.chunks(j).map(|col| space.norm_sq(col)).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        match &self.eval {
            None => self.clone(),
            Some(g) => {
                let g = g.clone();
                Self::new(self.wiener_dim, move |t, x, out| {
                    g(t, x, out);
                    out.iter_mut().for_each(|o| *o *= s);
                })
            }
        }
    }

    pub fn tilted(&self, a: f64) -> Self {
        match &self.eval {
            None => self.clone(),
            Some(g) => {
                let g = g.clone();
                Self::new(self.wiener_dim, move |t, x, out| {
                    let e = (a * t).exp();
                    let y: Vec<f64> = x.iter().map(|c| c * e).collect();
                    g(t, &y, out);
                    out.iter_mut().for_each(|o| *o /= e);
                })
            }
        }
    }
}

/// A finite atomic Levy measure `nu = sum_a rate_a delta_{mark_a}` on `E = R^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpIntensity {
    atoms: Vec<(Vec<f64>, f64)>,
}

impl JumpIntensity {
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if let Some((_, r)) = atoms.iter().find(|(_, r)| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("coefficients", format!("atom rates must be positive, got {r}")));
        }
        if let Some(d) = atoms.first().map(|(m, _)| m.len()) {
            if atoms.iter().any(|(m, _)| m.len() != d) {
                return Err(Error::invalid("coefficients", "all marks must share one dimension"));
            }
        }
        Ok(JumpIntensity { atoms })
    }

    pub fn none() -> Self {
        JumpIntensity { atoms: Vec::new() }
    }

    /// `rate * delta_{mark}` for a scalar mark.
    pub fn single(mark: f64, rate: f64) -> Result<Self> {
        Self::new(vec![(vec![mark], rate)])
    }

    pub fn atoms(&self) -> &[(Vec<f64>, f64)] {
        &self.atoms
    }

    /// `Lambda = sum rates`.
    pub fn total_rate(&self) -> f64 {
        self.atoms.iter().map(|(_, r)| r).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Jump coefficient `k(t, xi, x)` together with the intensity it integrates against.
#[derive(Clone)]
pub struct JumpCoefficient {
    eval: Option<JumpFn>,
    intensity: JumpIntensity,
}

impl fmt::Debug for JumpCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpCoefficient")
            .field("intensity", &self.intensity)
            .field("zero", &self.eval.is_none())
            .finish()
    }
}

impl JumpCoefficient {
    pub fn new(
        intensity: JumpIntensity,
        k: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        JumpCoefficient {
            eval: Some(Arc::new(k)),
            intensity,
        }
    }

    pub fn zero() -> Self {
        JumpCoefficient {
            eval: None,
            intensity: JumpIntensity::none(),
        }
    }

    /// `k = 0` but jumps are still sampled from `intensity`.
    pub fn zero_with(intensity: JumpIntensity) -> Self {
        JumpCoefficient { eval: None, intensity }
    }

    pub fn intensity(&self) -> &JumpIntensity {
        &self.intensity
    }

    pub fn is_zero(&self) -> bool {
        self.eval.is_none() || self.intensity.is_empty()
    }

    pub fn eval_into(&self, t: f64, mark: &[f64], x: &[f64], out: &mut [f64]) {
        match &self.eval {
            Some(k) => k(t, mark, x, out),
            None => out.fill(0.0),
        }
    }

    pub fn eval(&self, t: f64, mark: &[f64], x: &StateVector) -> StateVector {
        let mut out = vec![0.0; x.dim()];
        self.eval_into(t, mark, x.coords(), &mut out);
        StateVector::new(out, x.space().clone()).expect("same space")
    }

    /// `sum_atoms rate ||k(t, mark, x) - k(t, mark, y)||^2` (or `||k||^2` when `y` is `None`).
    pub fn atom_sum_sq(&self, space: &SpaceSpec, t: f64, x: &[f64], y: Option<&[f64]>) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let mut kx = vec![0.0; x.len()];
        let mut ky = vec![0.0; x.len()];
        self.intensity
            .atoms
            .iter()
            .map(|(mark, rate)| {
                self.eval_into(t, mark, x, &mut kx);
                match y {
                    Some(y) => {
                        self.eval_into(t, mark, y, &mut ky);
                        rate * space.dist_sq(&kx, &ky)
                    }
                    None => rate * space.norm_sq(&kx),
                }
            })
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        match &self.eval {
            None => self.clone(),
            Some(k) => {
                let k = k.clone();
                Self::new(self.intensity.clone(), move |t, m, x, out| {
                    k(t, m, x, out);
                    out.iter_mut().for_each(|o| *o *= s);
                })
            }
        }
    }

    pub fn tilted(&self, a: f64) -> Self {
        match &self.eval {
            None => self.clone(),
            Some(k) => {
                let k = k.clone();
                Self::new(self.intensity.clone(), move |t, m, x, out| {
                    let e = (a * t).exp();
                    let y: Vec<f64> = x.iter().map(|c| c * e).collect();
                    k(t, m, &y, out);
                    out.iter_mut().for_each(|o| *o /= e);
                })
            }
        }
    }
}

/// A complete system: semigroup, coefficients and declared constants.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub label: String,
    pub semigroup: SemigroupRep,
    pub f: DriftCoefficient,
    pub g: DiffusionCoefficient,
    pub k: JumpCoefficient,
    /// Combined Lipschitz constant `C` of `(g, k)`.
    pub c: f64,
    /// Linear-growth constant `D`, valid on the probe box.
    pub d: f64,
    /// Coordinate box `[-r, r]^J` on which probes sample states.
    pub probe_radius: f64,
}

impl SystemSpec {
    pub fn space(&self) -> &Arc<SpaceSpec> {
        self.semigroup.space()
    }

    pub fn dim(&self) -> usize {
        self.space().dim()
    }

    pub fn m(&self) -> f64 {
        self.f.monotonicity()
    }

    pub fn alpha(&self) -> f64 {
        self.semigroup.alpha()
    }

    /// The system solved by `e^{-a t} X_t`: semigroup `e^{-a t} S_t`, coefficients
    /// `e^{-a t} coef(t, e^{a t} x)`. Constants `M`, `C` are unchanged.
    pub fn tilted(&self, a: f64) -> SystemSpec {
        SystemSpec {
            label: format!("{} (tilted by {a})", self.label),
            semigroup: self.semigroup.shifted(-a),
            f: self.f.tilted(a),
            g: self.g.tilted(a),
            k: self.k.tilted(a),
            ..self.clone()
        }
    }

    /// Adds `shift * I` to the generator.
    pub fn with_alpha_shift(&self, shift: f64) -> SystemSpec {
        if shift == 0.0 {
            return self.clone();
        }
        SystemSpec {
            label: format!("{} (alpha shift {shift})", self.label),
            semigroup: self.semigroup.shifted(shift),
            ..self.clone()
        }
    }

    /// `gamma = 2 alpha + 4 M + 2 + C (8 c1^2 + 4)` for a Burkholder-Davis-Gundy constant `c1`.
    pub fn stability_exponent(&self, bdg_c1: f64) -> f64 {
        2.0 * self.alpha() + 4.0 * self.m() + 2.0 + self.c * (8.0 * bdg_c1 * bdg_c1 + 4.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemimonotoneProbe {
    pub max_quotient: f64,
    pub pass: bool,
    /// Pairs with `x == y`, which carry no information.
    pub skipped: usize,
}

/// `max <f(t,x) - f(t,y), x - y> / ||x - y||^2` over the samples; passes iff `<= M + 1e-8`.
pub fn probe_semimonotone(f: &DriftCoefficient, samples: &[(f64, StateVector, StateVector)]) -> SemimonotoneProbe {
    let mut max_quotient = f64::NEG_INFINITY;
    let mut skipped = 0;
    for (t, x, y) in samples {
        let space = x.space();
        let d2 = space.dist_sq(x.coords(), y.coords());
        if d2 == 0.0 {
            log::warn!("probe_semimonotone: skipping coincident pair");
            skipped += 1;
            continue;
        }
        let fx = f.eval(*t, x);
        let fy = f.eval(*t, y);
        let num: f64 = space
            .weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * (fx.coords()[i] - fy.coords()[i]) * (x.coords()[i] - y.coords()[i]))
            .sum();
        max_quotient = max_quotient.max(num / d2);
    }
    SemimonotoneProbe {
        max_quotient,
        pass: max_quotient <= f.monotonicity() + 1e-8,
        skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzGrowthProbe {
    /// Largest combined quotient `(||dg||_HS^2 + jump sum) / ||x - y||^2`.
    pub c_hat: f64,
    pub c_hat_diffusion: f64,
    pub c_hat_jump: f64,
    /// Largest `(||f||^2 + ||g||_HS^2 + jump sum) / (1 + ||x||^2)`.
    pub d_hat: f64,
    pub pass: bool,
}

/// Empirical Lipschitz and growth constants; passes iff both are within the declared
/// constants plus `1e-8`.
pub fn probe_lipschitz_growth(
    sys: &SystemSpec,
    samples: &[(f64, StateVector, StateVector)],
) -> Result<LipschitzGrowthProbe> {
    if samples.is_empty() {
        return Err(Error::invalid("coefficients", "probe needs at least one sample"));
    }
    let space = sys.space().clone();
    let j = space.dim();
    let kd = sys.g.wiener_dim();
    let mut gx = vec![0.0; j * kd];
    let mut gy = vec![0.0; j * kd];
    let mut fx = vec![0.0; j];
    let (mut c_hat, mut c_g, mut c_k, mut d_hat) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (t, x, y) in samples {
        let (x, y) = (x.coords(), y.coords());
        sys.g.eval_into(*t, x, &mut gx);
        sys.g.eval_into(*t, y, &mut gy);
        let d2 = space.dist_sq(x, y);
        if d2 > 0.0 {
            let dg: f64 = gx
                .chunks(j)
                .zip(gy.chunks(j))
                .map(|(a, b)| space.dist_sq(a, b))
                .sum();
            let dk = sys.k.atom_sum_sq(&space, *t, x, Some(y));
            c_g = c_g.max(dg / d2);
            c_k = c_k.max(dk / d2);
            c_hat = c_hat.max((dg + dk) / d2);
        }
        for z in [x, y] {
            sys.f.eval_into(*t, z, &mut fx);
            sys.g.eval_into(*t, z, &mut gx);
            let growth = space.norm_sq(&fx)
                + DiffusionCoefficient::hs_norm_sq(&space, &gx)
                + sys.k.atom_sum_sq(&space, *t, z, None);
            d_hat = d_hat.max(growth / (1.0 + space.norm_sq(z)));
        }
    }
    Ok(LipschitzGrowthProbe {
        c_hat,
        c_hat_diffusion: c_g,
        c_hat_jump: c_k,
        d_hat,
        pass: c_hat <= sys.c + 1e-8 && d_hat <= sys.d + 1e-8,
    })
}

/// Random pairs uniform in `[-radius, radius]^J` with times uniform in `[0, horizon]`.
pub fn probe_samples(
    space: &Arc<SpaceSpec>,
    n: usize,
    radius: f64,
    horizon: f64,
    seed: u64,
) -> Vec<(f64, StateVector, StateVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> StateVector {
        let c = (0..space.dim())
            .map(|_| radius * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        StateVector::new(c, space.clone()).expect("dimension matches")
    };
    (0..n)
        .map(|_| {
            let t = horizon * rng.random::<f64>();
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            (t, x, y)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SystemProbeReport {
    pub semimonotone: SemimonotoneProbe,
    pub lipschitz_growth: LipschitzGrowthProbe,
    pub pass: bool,
}

/// All hypothesis probes on `n` seeded samples from the system's probe box.
pub fn probe_system(sys: &SystemSpec, n: usize, horizon: f64, seed: u64) -> Result<SystemProbeReport> {
    let samples = probe_samples(sys.space(), n, sys.probe_radius, horizon, seed);
    let semimonotone = probe_semimonotone(&sys.f, &samples);
    let lipschitz_growth = probe_lipschitz_growth(sys, &samples)?;
    Ok(SystemProbeReport {
        pass: semimonotone.pass && lipschitz_growth.pass,
        semimonotone,
        lipschitz_growth,
    })
}

/// Pointwise real coefficient `(x, a) -> value` on the spatial domain.
pub type PointwiseFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Pointwise coefficients of a parabolic problem with finite-dimensional noise.
#[derive(Clone)]
pub struct PointwiseCoefficients {
    pub f: PointwiseFn,
    /// One function per Wiener dimension.
    pub g: Vec<PointwiseFn>,
    /// One function per jump component; marks live in `R^{k.len()}`.
    pub k: Vec<PointwiseFn>,
    pub intensity: JumpIntensity,
    pub m: f64,
    pub c: f64,
    pub d: f64,
}

/// Interior nodes `x_i = (i+1)/(J+1)` of `(0, 1)` and the orthonormal Dirichlet sine
/// basis sampled there (`Phi^T Phi = I`).
pub fn dirichlet_sine_basis(nodes: usize) -> (Vec<f64>, DMatrix<f64>) {
    let h = 1.0 / (nodes as f64 + 1.0);
    let xs: Vec<f64> = (0..nodes).map(|i| (i as f64 + 1.0) * h).collect();
    let s = (2.0 * h).sqrt();
    let phi = DMatrix::from_fn(nodes, nodes, |i, j| s * ((j as f64 + 1.0) * PI * xs[i]).sin());
    (xs, phi)
}

/// Superposition (Nemytskii) operators on a uniform Dirichlet grid of `J` interior nodes
/// of `(0, 1)`, with `S_t = Phi diag(e^{-lambda_j t}) Phi^T` in nodal coordinates.
///
/// `f(u)(x_i) = f0(x_i, u_i)`, column `i` of `g` is `g0_i(x, u)`, and
/// `k(xi, u) = sum_j xi_j k0_j(x, u)`.
pub fn nemytskii_lift(coeffs: PointwiseCoefficients, nodes: usize, eigenvalues: &[f64]) -> Result<SystemSpec> {
    if nodes == 0 || eigenvalues.len() != nodes {
        return Err(Error::invalid(
            "coefficients",
            format!("need one eigenvalue per node ({} nodes, {} eigenvalues)", nodes, eigenvalues.len()),
        ));
    }
    if let Some((mark, _)) = coeffs.intensity.atoms().first() {
        if mark.len() != coeffs.k.len() {
            return Err(Error::invalid(
                "coefficients",
                format!("marks have dimension {} but {} jump functions were given", mark.len(), coeffs.k.len()),
            ));
        }
    }
    if eigenvalues.iter().any(|l| *l < 0.0) {
        return Err(Error::invalid("coefficients", "eigenvalues must be >= 0"));
    }
    let (xs, phi) = dirichlet_sine_basis(nodes);
    let h = 1.0 / (nodes as f64 + 1.0);
    let space = Arc::new(SpaceSpec::new(vec![h; nodes], format!("L2(0,1) on {nodes} nodes"))?);
    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eigenvalues));
    let generator = -(&phi * lam * phi.transpose());
    let semigroup = SemigroupRep::dense(generator, 0.0, space)?;

    let xs = Arc::new(xs);
    let f0 = coeffs.f.clone();
    let fx = xs.clone();
    let f = DriftCoefficient::separable(coeffs.m, move |_, i, a| f0(fx[i], a));

    let kdim = coeffs.g.len();
    let g = if kdim == 0 {
        DiffusionCoefficient::zero(0)
    } else {
        let g0 = coeffs.g.clone();
        let gx = xs.clone();
        DiffusionCoefficient::new(kdim, move |_, u, out| {
            let j = u.len();
            for (col, gi) in g0.iter().enumerate() {
                for i in 0..j {
                    out[col * j + i] = gi(gx[i], u[i]);
                }
            }
        })
    };

    let k = if coeffs.k.is_empty() || coeffs.intensity.is_empty() {
        JumpCoefficient::zero_with(coeffs.intensity.clone())
    } else {
        let k0 = coeffs.k.clone();
        let kx = xs.clone();
        JumpCoefficient::new(coeffs.intensity.clone(), move |_, mark, u, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = k0
                    .iter()
                    .zip(mark)
                    .map(|(kj, xi)| xi * kj(kx[i], u[i]))
                    .sum();
            }
        })
    };

    Ok(SystemSpec {
        label: format!("nemytskii lift on {nodes} nodes"),
        semigroup,
        f,
        g,
        k,
        c: coeffs.c,
        d: coeffs.d,
        probe_radius: 2.0,
    })
}

/// Scalar real function.
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One-dimensional coefficients of a stochastic delay equation.
#[derive(Clone)]
pub struct DelayCoefficients {
    pub f: RealFn,
    pub g: RealFn,
    pub k: RealFn,
    /// Scalar marks; `k(xi, u) = xi k(u)`.
    pub intensity: JumpIntensity,
    pub m: f64,
    pub c: f64,
    pub d: f64,
}

/// Segment-space realisation of a delay equation driven by `mu` (atoms `(theta, weight)`
/// on `[-h, 0]`).
///
/// State layout: `[u, v_0, ..., v_{m-1}]` with `v_i ~ x(t + theta_i)`,
/// `theta_i = -h + i h/m`; the boundary value `v(0)` is `u`. Weights are `1` for `u` and
/// `h/m` for each segment node (so the norm is that of `R x L^2(-h, 0)`). The generator
/// uses the `mu`-integral (linear interpolation between nodes) for `u` and a first-order
/// upwind difference for `dv/dtheta`. The declared growth bound is the weighted
/// logarithmic norm of that generator.
pub fn delay_lift(
    mu: &[(f64, f64)],
    h: f64,
    coeffs: DelayCoefficients,
    psi: impl Fn(f64) -> f64,
    m: usize,
) -> Result<(SystemSpec, StateVector)> {
    if !(h > 0.0) {
        return Err(Error::invalid("coefficients", format!("delay h must be > 0, got {h}")));
    }
    if m < 2 {
        return Err(Error::invalid("coefficients", format!("segment grid needs m >= 2, got {m}")));
    }
    if let Some((theta, _)) = mu.iter().find(|(th, _)| !(*th >= -h - 1e-12 && *th <= 0.0)) {
        return Err(Error::invalid("coefficients", format!("mu atom at {theta} outside [-h, 0]")));
    }
    let dtheta = h / m as f64;
    let dim = m + 1;
    let mut weights = vec![dtheta; dim];
    weights[0] = 1.0;
    let space = Arc::new(SpaceSpec::new(weights, format!("R x L2(-{h},0) on {m} nodes"))?);

    // index of segment node i is i + 1; the node "m" (theta = 0) is u at index 0
    let idx = |i: usize| if i >= m { 0 } else { i + 1 };
    let mut a = DMatrix::zeros(dim, dim);
    for &(theta, w) in mu {
        let p = ((theta + h) / dtheta).clamp(0.0, m as f64);
        let lo = p.floor() as usize;
        let frac = p - lo as f64;
        a[(0, idx(lo))] += w * (1.0 - frac);
        if frac > 0.0 {
            a[(0, idx(lo + 1))] += w * frac;
        }
    }
    for i in 0..m {
        a[(i + 1, i + 1)] -= 1.0 / dtheta;
        a[(i + 1, idx(i + 1))] += 1.0 / dtheta;
    }
    let alpha = logarithmic_norm(&a, &space);
    let semigroup = SemigroupRep::dense(a, alpha, space.clone())?;

    let fs = coeffs.f.clone();
    let f = DriftCoefficient::separable(coeffs.m, move |_, i, a| if i == 0 { fs(a) } else { 0.0 });
    let gs = coeffs.g.clone();
    let g = DiffusionCoefficient::new(1, move |_, x, out| {
        out.fill(0.0);
        out[0] = gs(x[0]);
    });
    let k = if coeffs.intensity.is_empty() {
        JumpCoefficient::zero()
    } else {
        let ks = coeffs.k.clone();
        JumpCoefficient::new(coeffs.intensity.clone(), move |_, mark, x, out| {
            out.fill(0.0);
            out[0] = mark[0] * ks(x[0]);
        })
    };

    let mut x0 = Vec::with_capacity(dim);
    x0.push(psi(0.0));
    x0.extend((0..m).map(|i| psi(-h + i as f64 * dtheta)));
    let x0 = StateVector::new(x0, space)?;

    Ok((
        SystemSpec {
            label: format!("delay segment lift (h={h}, m={m})"),
            semigroup,
            f,
            g,
            k,
            c: coeffs.c,
            d: coeffs.d,
            probe_radius: 2.0,
        },
        x0,
    ))
}

/// `(t, u, v, out)`: velocity-block drift.
pub type BlockDriftFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Coefficients of a second-order (wave-type) problem in modal coordinates.
#[derive(Clone)]
pub struct HyperbolicCoefficients {
    /// `f(u, v)`, valued in the velocity block.
    pub f: BlockDriftFn,
    /// Semimonotonicity constant of `f` in `v`.
    pub m_v: f64,
    /// Lipschitz constant of `f` in `u` (energy norm to `H_n`).
    pub c_u: f64,
    /// `g(u)`: `J x K` column-major, valued in the velocity block. `None` means zero.
    pub g: Option<MatrixFn>,
    pub wiener_dim: usize,
    /// `k(u)(xi)`, valued in the velocity block.
    pub k: Option<JumpFn>,
    pub intensity: JumpIntensity,
    pub c: f64,
    pub d: f64,
}

/// Lifts `u_tt = A u + f(u, u_t) + g(u) dW + k(u) dN` to the first-order system on
/// `H_{n+1} x H_n` with the wave group. The drift constant becomes `M + C_u`.
pub fn hyperbolic_lift(coeffs: HyperbolicCoefficients, eigenvalues: &[f64], n: i32) -> Result<SystemSpec> {
    if let Some(l) = eigenvalues.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::invalid("coefficients", format!("wave eigenvalues must be > 0, got {l}")));
    }
    let j = eigenvalues.len();
    if j == 0 {
        return Err(Error::invalid("coefficients", "need at least one mode"));
    }
    let space = Arc::new(SpaceSpec::hyperbolic_energy(eigenvalues, n)?);
    let semigroup = SemigroupRep::hyperbolic(eigenvalues, 0.0, space)?;

    let fv = coeffs.f.clone();
    let f = DriftCoefficient::general(coeffs.m_v + coeffs.c_u, move |t, x, out| {
        let (u, v) = x.split_at(j);
        out[..j].fill(0.0);
        fv(t, u, v, &mut out[j..]);
    });

    let kd = coeffs.wiener_dim;
    let g = match coeffs.g.clone() {
        Some(gu) if kd > 0 => DiffusionCoefficient::new(kd, move |t, x, out| {
            let mut block = vec![0.0; j * kd];
            gu(t, &x[..j], &mut block);
            for col in 0..kd {
                out[col * 2 * j..col * 2 * j + j].fill(0.0);
                out[col * 2 * j + j..(col + 1) * 2 * j].copy_from_slice(&block[col * j..(col + 1) * j]);
            }
        }),
        _ => DiffusionCoefficient::zero(kd),
    };
    let k = match coeffs.k.clone() {
        Some(ku) if !coeffs.intensity.is_empty() => JumpCoefficient::new(coeffs.intensity.clone(), move |t, mark, x, out| {
            out[..j].fill(0.0);
            ku(t, mark, &x[..j], &mut out[j..]);
        }),
        _ => JumpCoefficient::zero_with(coeffs.intensity.clone()),
    };
    Ok(SystemSpec {
        label: format!("hyperbolic lift ({j} modes, n={n})"),
        semigroup,
        f,
        g,
        k,
        c: coeffs.c,
        d: coeffs.d,
        probe_radius: 1.0,
    })
}
