//! Ready-made systems with declared constants, initial data and a recommended grid.
//!
//! The four model problems are a stochastic delay equation, a parabolic equation with
//! finite-dimensional noise (nodal coordinates), a parabolic equation with space-time
//! noise (modal coordinates in a Sobolev-scale space) and a damped wave equation. The
//! remaining presets are scalar systems used to exercise individual checks.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{
    delay_lift, hyperbolic_lift, nemytskii_lift, DelayCoefficients, DiffusionCoefficient, DriftCoefficient,
    HyperbolicCoefficients, JumpCoefficient, JumpIntensity, PointwiseCoefficients, SystemSpec,
};
use crate::error::{Error, Result};
use crate::hilbert::{SemigroupRep, SpaceSpec, StateVector};
use crate::noise::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Delay,
    ParabolicFindim,
    ParabolicSpacetime,
    Hyperbolic,
    /// `dX = (-X - X^3) dt + 0.3 X dW + 0.2 xi X dN~`, `nu = delta_1`.
    Cubic,
    /// `dX = -X dt + 0.5 dW + xi dN~`, `nu = delta_{0.5} + 2 delta_{-0.3}`.
    OuJumps,
    /// `dX = -X dt + dW`.
    Ou,
    /// `dX = (-10 X - X^3) dt + sqrt(0.06) X dW + xi X dN~`, `nu = delta_{0.2}`.
    Stability,
    /// `dX = dW` from 0.
    WienerIdentity,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 9] = [
        ScenarioName::Delay,
        ScenarioName::ParabolicFindim,
        ScenarioName::ParabolicSpacetime,
        ScenarioName::Hyperbolic,
        ScenarioName::Cubic,
        ScenarioName::OuJumps,
        ScenarioName::Ou,
        ScenarioName::Stability,
        ScenarioName::WienerIdentity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::Delay => "delay",
            ScenarioName::ParabolicFindim => "parabolic_findim",
            ScenarioName::ParabolicSpacetime => "parabolic_spacetime",
            ScenarioName::Hyperbolic => "hyperbolic",
            ScenarioName::Cubic => "cubic",
            ScenarioName::OuJumps => "ou_jumps",
            ScenarioName::Ou => "ou",
            ScenarioName::Stability => "stability",
            ScenarioName::WienerIdentity => "wiener_identity",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|n| n.as_str() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|n| n.as_str()).collect();
                Error::invalid("examples", format!("unknown scenario '{s}' (known: {})", names.join(", ")))
            })
    }
}

/// Optional overrides; `None` keeps the preset value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    /// Number of nodes / modes `J` (at most 256).
    pub nodes: Option<usize>,
    /// Wiener dimension `K` (at most 16) where the preset allows a choice.
    pub wiener_dim: Option<usize>,
    /// Sobolev index `n` for the space-time parabolic and wave presets.
    pub sobolev_index: Option<i32>,
    /// Segment nodes `m` of the delay lift.
    pub delay_nodes: Option<usize>,
    /// Replaces the Dirichlet spectrum `(j pi)^2` (parabolic and wave presets).
    pub eigenvalues: Option<Vec<f64>>,
    /// Multiplies `g` and `k` (and `C` by its square).
    pub noise_scale: f64,
    /// Sets `g = 0` and `k = 0` (noise is still sampled).
    pub zero_noise: bool,
    /// Sets `f = 0`.
    pub zero_drift: bool,
    /// Multiplies the preset initial state.
    pub initial_scale: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            nodes: None,
            wiener_dim: None,
            sobolev_index: None,
            delay_nodes: None,
            eigenvalues: None,
            noise_scale: 1.0,
            zero_noise: false,
            zero_drift: false,
            initial_scale: 1.0,
        }
    }
}

/// A system with its initial state, a second initial state for two-point comparisons
/// and a recommended grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: ScenarioName,
    pub system: SystemSpec,
    pub x0: StateVector,
    pub y0: StateVector,
    pub grid: TimeGrid,
}

fn dirichlet_spectrum(j: usize) -> Vec<f64> {
    (1..=j).map(|k| (k as f64 * PI).powi(2)).collect()
}

fn check_range(name: &str, v: usize, lo: usize, hi: usize) -> Result<usize> {
    if v < lo || v > hi {
        return Err(Error::invalid("examples", format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(v)
}

fn spectrum(params: &ScenarioParams, default_j: usize) -> Result<Vec<f64>> {
    let lam = match &params.eigenvalues {
        Some(l) => {
            if let Some(j) = params.nodes {
                if j != l.len() {
                    return Err(Error::invalid(
                        "examples",
                        format!("nodes = {j} but {} eigenvalues were given", l.len()),
                    ));
                }
            }
            l.clone()
        }
        None => dirichlet_spectrum(params.nodes.unwrap_or(default_j)),
    };
    check_range("nodes", lam.len(), 1, 256)?;
    if lam.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::invalid("examples", "eigenvalues must be positive"));
    }
    Ok(lam)
}

/// Builds a preset. Errors on out-of-range parameters.
pub fn scenario(name: ScenarioName, params: &ScenarioParams) -> Result<Scenario> {
    if !(params.noise_scale.is_finite() && params.noise_scale >= 0.0) {
        return Err(Error::invalid("examples", "noise_scale must be >= 0"));
    }
    if !params.initial_scale.is_finite() {
        return Err(Error::invalid("examples", "initial_scale must be finite"));
    }
    if let Some(k) = params.wiener_dim {
        check_range("wiener_dim", k, 1, 16)?;
    }
    let grid = TimeGrid::new(0.0, 1.0, 1000)?;
    let (mut system, x0) = match name {
        ScenarioName::ParabolicFindim => parabolic_findim(params)?,
        ScenarioName::ParabolicSpacetime => parabolic_spacetime(params)?,
        ScenarioName::Hyperbolic => hyperbolic(params)?,
        ScenarioName::Delay => delay(params)?,
        ScenarioName::Cubic => scalar(
            "cubic",
            1.0,
            0.0,
            DriftCoefficient::separable(0.0, |_, _, a| -a * a * a),
            Some(0.3),
            Some((JumpIntensity::single(1.0, 1.0)?, 0.2, true)),
            0.13,
            16.2,
            1.0,
        )?,
        ScenarioName::OuJumps => scalar(
            "ou_jumps",
            1.0,
            0.0,
            DriftCoefficient::zero(),
            None,
            Some((JumpIntensity::new(vec![(vec![0.5], 1.0), (vec![-0.3], 2.0)])?, 1.0, false)),
            0.0,
            0.7,
            1.0,
        )
        .map(|(mut s, x)| {
            s.g = DiffusionCoefficient::new(1, |_, _, out| out[0] = 0.5);
            (s, x)
        })?,
        ScenarioName::Ou => scalar(
            "ou",
            1.0,
            0.0,
            DriftCoefficient::zero(),
            None,
            None,
            0.0,
            1.0,
            1.0,
        )
        .map(|(mut s, x)| {
            s.g = DiffusionCoefficient::new(1, |_, _, out| out[0] = 1.0);
            (s, x)
        })?,
        ScenarioName::Stability => scalar(
            "stability",
            10.0,
            -10.0,
            DriftCoefficient::separable(0.0, |_, _, a| -a * a * a),
            Some(0.06f64.sqrt()),
            Some((JumpIntensity::single(0.2, 1.0)?, 1.0, true)),
            0.1,
            16.1,
            1.0,
        )?,
        ScenarioName::WienerIdentity => scalar(
            "wiener_identity",
            0.0,
            0.0,
            DriftCoefficient::zero(),
            None,
            None,
            0.0,
            1.0,
            0.0,
        )
        .map(|(mut s, x)| {
            s.g = DiffusionCoefficient::new(1, |_, _, out| out[0] = 1.0);
            (s, x)
        })?,
    };

    if params.zero_drift {
        system.f = DriftCoefficient::zero();
    }
    if params.zero_noise {
        system.g = DiffusionCoefficient::zero(system.g.wiener_dim());
        system.k = JumpCoefficient::zero_with(system.k.intensity().clone());
        system.c = 0.0;
    } else if params.noise_scale != 1.0 {
        let s = params.noise_scale;
        system.g = system.g.scaled(s);
        system.k = system.k.scaled(s);
        system.c *= s * s;
        system.d *= s.max(1.0).powi(2);
    }
    let x0 = x0.scaled(params.initial_scale);
    let y0 = if x0.norm() > 0.0 {
        x0.scaled(0.5)
    } else {
        let mut e = StateVector::zeros(x0.space().clone());
        e.coords_mut()[0] = 0.5;
        e
    };
    Ok(Scenario {
        name,
        system,
        x0,
        y0,
        grid,
    })
}

#[allow(clippy::too_many_arguments)]
fn scalar(
    label: &str,
    lambda: f64,
    alpha: f64,
    f: DriftCoefficient,
    g_linear: Option<f64>,
    k_linear: Option<(JumpIntensity, f64, bool)>,
    c: f64,
    d: f64,
    x0: f64,
) -> Result<(SystemSpec, StateVector)> {
    let space = Arc::new(SpaceSpec::new(vec![1.0], label)?);
    let semigroup = SemigroupRep::diagonal(vec![lambda], alpha, space.clone())?;
    let g = match g_linear {
        Some(s) => DiffusionCoefficient::new(1, move |_, x, out| out[0] = s * x[0]),
        None => DiffusionCoefficient::zero(1),
    };
    let k = match k_linear {
        // (intensity, amplitude, multiplicative)
        Some((nu, a, true)) => JumpCoefficient::new(nu, move |_, m, x, out| out[0] = a * m[0] * x[0]),
        Some((nu, a, false)) => JumpCoefficient::new(nu, move |_, m, _, out| out[0] = a * m[0]),
        None => JumpCoefficient::zero(),
    };
    Ok((
        SystemSpec {
            label: label.to_string(),
            semigroup,
            f,
            g,
            k,
            c,
            d,
            probe_radius: 2.0,
        },
        StateVector::new(vec![x0], space)?,
    ))
}

/// Nodal truncation on `(0, 1)` with Dirichlet spectrum, `f(a) = a - a^3` (`M = 1`),
/// `g_i = 0.3 K^{-1/2} sin((i+1) pi x) tanh(a)`, `k = 0.2 xi tanh(a)` with `nu = delta_1`.
fn parabolic_findim(params: &ScenarioParams) -> Result<(SystemSpec, StateVector)> {
    let lam = spectrum(params, 32)?;
    let j = lam.len();
    let kdim = params.wiener_dim.unwrap_or(1);
    let amp = 0.3 / (kdim as f64).sqrt();
    let g = (0..kdim)
        .map(|i| {
            let freq = (i as f64 + 1.0) * PI;
            Arc::new(move |x: f64, a: f64| amp * (freq * x).sin() * a.tanh()) as Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>
        })
        .collect();
    let coeffs = PointwiseCoefficients {
        f: Arc::new(|_, a| a - a * a * a),
        g,
        k: vec![Arc::new(|_, a| 0.2 * a.tanh())],
        intensity: JumpIntensity::single(1.0, 1.0)?,
        m: 1.0,
        // 0.3^2 + 0.2^2
        c: 0.13,
        // sup_{|a|<=2} (a - a^3)^2 / (1 + a^2) = 7.2, plus sup ||g||_HS^2 + ||k||^2 <= 0.13
        d: 7.33,
    };
    let mut sys = nemytskii_lift(coeffs, j, &lam)?;
    sys.label = "parabolic_findim".into();
    sys.probe_radius = 2.0;
    let h = 1.0 / (j as f64 + 1.0);
    let x0: Vec<f64> = (0..j).map(|i| (PI * (i as f64 + 1.0) * h).sin()).collect();
    let x0 = StateVector::new(x0, sys.space().clone())?;
    Ok((sys, x0))
}

/// Modal truncation in `H_n` (weights `(1+lambda_j)^n`), `f_j(a) = a - a^3`,
/// diagonal `g_jj = sigma_j (1 + tanh u_j)/2`, `k(xi, u)_j = kappa_j xi_{j mod 2} sin(u_j)`
/// with marks `e_1` (rate 1) and `-0.5 e_2` (rate 2);
/// `sigma_j = (1+lambda_j)^{-(n+1)/2}`, `kappa_j = sigma_j / 2`.
fn parabolic_spacetime(params: &ScenarioParams) -> Result<(SystemSpec, StateVector)> {
    let lam = spectrum(params, 16)?;
    let j = lam.len();
    let n = params.sobolev_index.unwrap_or(1);
    if !(-4..=4).contains(&n) {
        return Err(Error::invalid("examples", format!("sobolev_index {n} outside [-4, 4]")));
    }
    if params.wiener_dim.is_some_and(|k| k != j) {
        log::warn!("parabolic_spacetime uses one Wiener dimension per mode; ignoring wiener_dim");
    }
    let space = Arc::new(SpaceSpec::sobolev_scale(&lam, n)?);
    let semigroup = SemigroupRep::diagonal(lam.clone(), 0.0, space.clone())?;
    let sigma: Arc<Vec<f64>> = Arc::new(lam.iter().map(|l| (1.0 + l).powf(-(n as f64 + 1.0) / 2.0)).collect());
    let sg = sigma.clone();
    let g = DiffusionCoefficient::new(j, move |_, u, out| {
        out.fill(0.0);
        for i in 0..j {
            out[i * j + i] = sg[i] * (1.0 + u[i].tanh()) / 2.0;
        }
    });
    let sk = sigma.clone();
    let mut m1 = vec![0.0; 2];
    m1[0] = 1.0;
    let mut m2 = vec![0.0; 2];
    m2[1] = -0.5;
    let k = JumpCoefficient::new(JumpIntensity::new(vec![(m1, 1.0), (m2, 2.0)])?, move |_, mark, u, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = 0.5 * sk[i] * mark[i % 2] * u[i].sin();
        }
    });
    let w = space.weights();
    // per-mode Lipschitz factors: g gives w sigma^2 / 4, k gives w (sigma/2)^2 * (sum rate xi^2 <= 1)
    let c = (0..j)
        .map(|i| sigma[i] * sigma[i] * 0.25 + sigma[i] * sigma[i] * 0.25)
        .fold(0.0, f64::max);
    // f: (1 - a^2)^2 <= 9 on |a| <= 2; g and k bounded by their values at saturation
    let noise_sup: f64 = (0..j).map(|i| w[i] * sigma[i] * sigma[i] * (1.0 + 0.25 * 1.0)).sum();
    let d = 9.0 + noise_sup;
    let sys = SystemSpec {
        label: "parabolic_spacetime".into(),
        semigroup,
        f: DriftCoefficient::separable(1.0, |_, _, a| a - a * a * a),
        g,
        k,
        c,
        d,
        probe_radius: 2.0,
    };
    let x0 = StateVector::zeros(space);
    Ok((sys, x0))
}

/// Damped wave equation in modal energy coordinates: `f(u, v)_j = -v_j - u_j^3`,
/// `g(u)_jj = sigma_j (1 + tanh u_j)/2`, `k(u)(xi)_j = xi kappa_j (1 + tanh u_j)/2` with
/// `nu = delta_1`, `sigma_j = 0.5/j`, `kappa_j = 0.3/j`. The `u`-Lipschitz constant of the
/// cubic is `3 R^2 / sqrt(lambda_1)` on the probe box of radius `R = 1`.
fn hyperbolic(params: &ScenarioParams) -> Result<(SystemSpec, StateVector)> {
    let lam = spectrum(params, 16)?;
    let j = lam.len();
    let n = params.sobolev_index.unwrap_or(0);
    if !(-4..=4).contains(&n) {
        return Err(Error::invalid("examples", format!("sobolev_index {n} outside [-4, 4]")));
    }
    let radius = 1.0;
    let lam_min = lam.iter().copied().fold(f64::INFINITY, f64::min);
    let vw: Vec<f64> = lam.iter().map(|l| (1.0 + l).powi(n)).collect();
    let uw: Vec<f64> = lam.iter().zip(&vw).map(|(l, w)| l * w).collect();
    // ||d(u^3)||_{H_n} <= 3 R^2 max_j sqrt(vw_j / uw_j) ||du||_{H_{n+1}}
    let c_u = 3.0 * radius * radius / lam_min.sqrt();
    let sigma: Arc<Vec<f64>> = Arc::new((1..=j).map(|i| 0.5 / i as f64).collect());
    let kappa: Arc<Vec<f64>> = Arc::new((1..=j).map(|i| 0.3 / i as f64).collect());
    let sg = sigma.clone();
    let kp = kappa.clone();
    let lip = (0..j)
        .map(|i| vw[i] * (sigma[i] * sigma[i] + kappa[i] * kappa[i]) / (4.0 * uw[i]))
        .fold(0.0, f64::max);
    let noise_sup: f64 = (0..j).map(|i| vw[i] * (sigma[i] * sigma[i] + kappa[i] * kappa[i])).sum();
    // ||v + u^3||^2 <= 2||v||^2 + 2 max_j(vw/uw) ||u||^2 on |u_j| <= 1
    let f_growth = 2.0f64.max(2.0 * (0..j).map(|i| vw[i] / uw[i]).fold(0.0, f64::max));
    let coeffs = HyperbolicCoefficients {
        f: Arc::new(|_, u, v, out| {
            for ((o, ui), vi) in out.iter_mut().zip(u).zip(v) {
                *o = -vi - ui * ui * ui;
            }
        }),
        m_v: 0.0,
        c_u,
        g: Some(Arc::new(move |_, u, out| {
            out.fill(0.0);
            for i in 0..j {
                out[i * j + i] = sg[i] * (1.0 + u[i].tanh()) / 2.0;
            }
        })),
        wiener_dim: j,
        k: Some(Arc::new(move |_, mark, u, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = mark[0] * kp[i] * (1.0 + u[i].tanh()) / 2.0;
            }
        })),
        intensity: JumpIntensity::single(1.0, 1.0)?,
        c: lip,
        d: f_growth + noise_sup,
    };
    let mut sys = hyperbolic_lift(coeffs, &lam, n)?;
    sys.label = "hyperbolic".into();
    sys.probe_radius = radius;
    let x0 = StateVector::zeros(sys.space().clone());
    Ok((sys, x0))
}

/// `dx = (int_{-1}^0 x(t+theta) mu(dtheta) - x^3) dt + 0.2 x dW + 0.1 xi x dN~`,
/// `mu = -delta_{-1}`, `nu = delta_1`, history `psi = 1`.
fn delay(params: &ScenarioParams) -> Result<(SystemSpec, StateVector)> {
    let m = check_range("delay_nodes", params.delay_nodes.unwrap_or(32), 2, 1024)?;
    let coeffs = DelayCoefficients {
        f: Arc::new(|a| -a * a * a),
        g: Arc::new(|a| 0.2 * a),
        k: Arc::new(|a| 0.1 * a),
        intensity: JumpIntensity::single(1.0, 1.0)?,
        m: 0.0,
        c: 0.05,
        // u^6 <= 16 u^2 on |u| <= 2
        d: 16.1,
    };
    let (mut sys, x0) = delay_lift(&[(-1.0, -1.0)], 1.0, coeffs, |_| 1.0, m)?;
    sys.label = "delay".into();
    Ok((sys, x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::probe_system;
    use approx::assert_abs_diff_eq;

    #[test]
    fn names_round_trip() {
        for n in ScenarioName::ALL {
            assert_eq!(n.as_str().parse::<ScenarioName>().unwrap(), n);
        }
        assert!("nope".parse::<ScenarioName>().is_err());
    }

    #[test]
    fn spacetime_weights_are_sobolev() {
        let p = ScenarioParams {
            nodes: Some(16),
            sobolev_index: Some(1),
            ..Default::default()
        };
        let s = scenario(ScenarioName::ParabolicSpacetime, &p).unwrap();
        for (j, w) in s.system.space().weights().iter().enumerate() {
            assert_abs_diff_eq!(*w, 1.0 + ((j + 1) as f64 * PI).powi(2), epsilon = 1e-9);
        }
    }

    #[test]
    fn every_preset_passes_its_probes() {
        for name in ScenarioName::ALL {
            let s = scenario(name, &ScenarioParams::default()).unwrap();
            let r = probe_system(&s.system, 400, 1.0, 17).unwrap();
            assert!(r.pass, "{name}: {r:?}");
        }
    }

    #[test]
    fn out_of_range_parameters() {
        let p = ScenarioParams {
            nodes: Some(300),
            ..Default::default()
        };
        assert!(scenario(ScenarioName::ParabolicFindim, &p).is_err());
        let p = ScenarioParams {
            wiener_dim: Some(17),
            ..Default::default()
        };
        assert!(scenario(ScenarioName::ParabolicFindim, &p).is_err());
        let p = ScenarioParams {
            delay_nodes: Some(1),
            ..Default::default()
        };
        assert!(scenario(ScenarioName::Delay, &p).is_err());
    }

    #[test]
    fn stability_preset_constants() {
        let s = scenario(ScenarioName::Stability, &ScenarioParams::default()).unwrap();
        assert_abs_diff_eq!(s.system.stability_exponent(2.0), -14.4, epsilon = 1e-12);
    }
}
