//! Time grids, seeded Wiener/Poisson noise and the martingale increments built from them.
//!
//! Every path owns a `(seed, stream_id)` pair. The Wiener part and the jump part of a
//! path draw from two distinct ChaCha streams, so paths never share random numbers and
//! results do not depend on how paths are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::Serialize;

use crate::coefficients::{DiffusionCoefficient, JumpIntensity, SystemSpec};
use crate::error::{Error, Result};

/// Uniform grid `t0 < t0 + dt < ... < t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(Error::invalid("noise", format!("need t0 < t_end, got [{t0}, {t_end}]")));
        }
        if n_steps == 0 {
            return Err(Error::invalid("noise", "grid needs at least one step"));
        }
        Ok(TimeGrid { t0, t_end, n_steps })
    }

    /// Grid with step `dt`; `(t_end - t0) / dt` must be an integer up to `1e-9`.
    pub fn with_step(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("noise", format!("step must be > 0, got {dt}")));
        }
        let n = (t_end - t0) / dt;
        let rounded = n.round();
        if rounded < 1.0 || (n - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::invalid(
                "noise",
                format!("step {dt} does not divide [{t0}, {t_end}]"),
            ));
        }
        Self::new(t0, t_end, rounded as usize)
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.t_end
        } else {
            self.t0 + n as f64 * self.dt()
        }
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t0
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.time(n)).collect()
    }

    /// Step `m` with `t` in `[t_m, t_{m+1})`; the right end belongs to the last step.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        if !(t >= self.t0 && t <= self.t_end) {
            return Err(Error::JumpOutsideGrid {
                time: t,
                t0: self.t0,
                t_end: self.t_end,
            });
        }
        let m = ((t - self.t0) / self.dt()).floor() as usize;
        Ok(m.min(self.n_steps - 1))
    }

    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::invalid(
                "noise",
                format!("factor {factor} does not divide {} steps", self.n_steps),
            ));
        }
        Self::new(self.t0, self.t_end, self.n_steps / factor)
    }
}

/// A jump of the Poisson random measure: time, mark and the grid step containing it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub atom: usize,
    pub mark: Vec<f64>,
    pub step: usize,
}

/// Realised driving noise on a grid: Wiener increments (`n_steps x K`, row per step) and
/// the jump events in `[t0, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisePath {
    pub grid: TimeGrid,
    pub wiener_dim: usize,
    pub wiener: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    pub seed: u64,
    pub stream_id: u64,
}

/// Stream id for path `path` of ensemble arm `arm`.
pub fn stream_id(arm: u32, path: u32) -> u64 {
    ((arm as u64) << 32) | path as u64
}

fn rng_for(seed: u64, stream: u64, part: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(2).wrapping_add(part));
    rng
}

/// Draws `dW ~ N(0, dt I_K)` per step and a Poisson random measure with the given
/// atomic intensity on `[t0, t_end)`. Deterministic in `(seed, stream_id)`.
pub fn sample_noise(
    grid: &TimeGrid,
    wiener_dim: usize,
    intensity: &JumpIntensity,
    seed: u64,
    stream_id: u64,
) -> NoisePath {
    let sd = grid.dt().sqrt();
    let mut rng = rng_for(seed, stream_id, 0);
    let wiener = (0..grid.n_steps * wiener_dim)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut jumps = Vec::new();
    let total = intensity.total_rate();
    if total > 0.0 {
        let mut rng = rng_for(seed, stream_id, 1);
        let clock = Exp::new(total).expect("positive total rate");
        let mut t = grid.t0;
        loop {
            t += rng.sample(clock);
            if t >= grid.t_end {
                break;
            }
            let mut u = rng.random::<f64>() * total;
            let mut atom = intensity.atoms().len() - 1;
            for (a, (_, rate)) in intensity.atoms().iter().enumerate() {
                if u < *rate {
                    atom = a;
                    break;
                }
                u -= rate;
            }
            jumps.push(JumpEvent {
                time: t,
                atom,
                mark: intensity.atoms()[atom].0.clone(),
                step: grid.step_of(t).expect("jump sampled inside the grid"),
            });
        }
    }
    NoisePath {
        grid: *grid,
        wiener_dim,
        wiener,
        jumps,
        seed,
        stream_id,
    }
}

impl NoisePath {
    /// Noise that is identically zero (no Wiener movement, no jumps).
    pub fn zero(grid: &TimeGrid, wiener_dim: usize) -> Self {
        NoisePath {
            grid: *grid,
            wiener_dim,
            wiener: vec![0.0; grid.n_steps * wiener_dim],
            jumps: Vec::new(),
            seed: 0,
            stream_id: 0,
        }
    }

    /// Builds a path from explicit increments and jump `(time, atom, mark)` triples.
    pub fn from_parts(
        grid: &TimeGrid,
        wiener_dim: usize,
        wiener: Vec<f64>,
        jumps: Vec<(f64, usize, Vec<f64>)>,
    ) -> Result<Self> {
        if wiener.len() != grid.n_steps * wiener_dim {
            return Err(Error::DimensionMismatch {
                expected: grid.n_steps * wiener_dim,
                got: wiener.len(),
            });
        }
        let jumps = jumps
            .into_iter()
            .map(|(time, atom, mark)| {
                Ok(JumpEvent {
                    step: grid.step_of(time)?,
                    time,
                    atom,
                    mark,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NoisePath {
            grid: *grid,
            wiener_dim,
            wiener,
            jumps,
            seed: 0,
            stream_id: 0,
        })
    }

    /// Wiener increment of step `m`.
    pub fn dw(&self, m: usize) -> &[f64] {
        &self.wiener[m * self.wiener_dim..(m + 1) * self.wiener_dim]
    }

    /// Same realisation on a grid `factor` times coarser: Wiener increments are summed
    /// and jumps are re-bucketed.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        let grid = self.grid.coarsened(factor)?;
        let k = self.wiener_dim;
        let mut wiener = vec![0.0; grid.n_steps * k];
        for m in 0..self.grid.n_steps {
            let c = m / factor;
            for i in 0..k {
                wiener[c * k + i] += self.wiener[m * k + i];
            }
        }
        let jumps = self
            .jumps
            .iter()
            .map(|j| JumpEvent {
                step: j.step / factor,
                ..j.clone()
            })
            .collect();
        Ok(NoisePath {
            grid,
            wiener_dim: k,
            wiener,
            jumps,
            seed: self.seed,
            stream_id: self.stream_id,
        })
    }

    /// Jumps grouped by step: `out[m]` are the indices into `jumps` falling in step `m`.
    pub fn jumps_by_step(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.grid.n_steps];
        for (i, j) in self.jumps.iter().enumerate() {
            out[j.step].push(i);
        }
        out
    }
}

/// Martingale increments along a path with running quadratic variations.
///
/// `realized_qv[n]` and `predictable_qv[n]` are sums over steps `m < n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleIncrements {
    pub dz: Vec<Vec<f64>>,
    pub realized_qv: Vec<f64>,
    pub predictable_qv: Vec<f64>,
    /// Per step, `2 sum_{i<l} <k_i, k_l>` over jumps sharing the step.
    pub jump_cross: Vec<f64>,
}

/// Computes one step of `g dW + k dN~` at a given state, reusing scratch buffers.
pub struct IncrementAssembler<'a> {
    sys: &'a SystemSpec,
    noise: &'a NoisePath,
    by_step: Vec<Vec<usize>>,
    gbuf: Vec<f64>,
    kbuf: Vec<f64>,
    jsum: Vec<f64>,
}

/// One assembled increment and its quadratic-variation contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepQv {
    pub realized: f64,
    pub predictable: f64,
    /// `||sum_i k_i||^2 - sum_i ||k_i||^2` over the jumps of the step.
    pub jump_cross: f64,
}

impl<'a> IncrementAssembler<'a> {
    pub fn new(sys: &'a SystemSpec, noise: &'a NoisePath) -> Result<Self> {
        if noise.wiener_dim != sys.g.wiener_dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.g.wiener_dim(),
                got: noise.wiener_dim,
            });
        }
        let j = sys.dim();
        Ok(IncrementAssembler {
            sys,
            noise,
            by_step: noise.jumps_by_step(),
            gbuf: vec![0.0; j * noise.wiener_dim],
            kbuf: vec![0.0; j],
            jsum: vec![0.0; j],
        })
    }

    /// Writes `dZ_m = g(t_m, x) dW_m + sum_jumps k(t_m, xi, x) - dt sum_atoms rate k(t_m, mark, x)`
    /// into `out`. Jump coefficients are evaluated at the left grid time `t_m`.
    /// The realised variation adds `dt ||g||_HS^2` and `||k||^2` per jump.
    pub fn step(&mut self, m: usize, x: &[f64], out: &mut [f64]) -> StepQv {
        let grid = &self.noise.grid;
        let t = grid.time(m);
        let dt = grid.dt();
        let space = self.sys.space();
        let j = x.len();
        out.fill(0.0);
        let mut qv = StepQv {
            realized: 0.0,
            predictable: 0.0,
            jump_cross: 0.0,
        };
        if !self.sys.g.is_zero() {
            self.sys.g.eval_into(t, x, &mut self.gbuf);
            for (col, dw) in self.noise.dw(m).iter().enumerate() {
                let c = &self.gbuf[col * j..(col + 1) * j];
                for (o, gi) in out.iter_mut().zip(c) {
                    *o += gi * dw;
                }
            }
            let hs = DiffusionCoefficient::hs_norm_sq(space, &self.gbuf);
            qv.realized += dt * hs;
            qv.predictable += dt * hs;
        }
        if !self.sys.k.is_zero() {
            if !self.by_step[m].is_empty() {
                self.jsum.fill(0.0);
                let mut single = 0.0;
                for &ji in &self.by_step[m] {
                    let ev = &self.noise.jumps[ji];
                    self.sys.k.eval_into(t, &ev.mark, x, &mut self.kbuf);
                    self.jsum.iter_mut().zip(&self.kbuf).for_each(|(s, k)| *s += k);
                    single += space.norm_sq(&self.kbuf);
                }
                out.iter_mut().zip(&self.jsum).for_each(|(o, s)| *o += s);
                qv.realized += single;
                if self.by_step[m].len() > 1 {
                    qv.jump_cross = space.norm_sq(&self.jsum) - single;
                }
            }
            for (mark, rate) in self.sys.k.intensity().atoms() {
                self.sys.k.eval_into(t, mark, x, &mut self.kbuf);
                out.iter_mut()
                    .zip(&self.kbuf)
                    .for_each(|(o, k)| *o -= dt * rate * k);
                qv.predictable += dt * rate * space.norm_sq(&self.kbuf);
            }
        }
        qv
    }
}

/// Martingale increments of `g(X) dW + k(X) dN~` along `states` (at least `n_steps`
/// states; the last one is not used).
pub fn assemble_increments(
    sys: &SystemSpec,
    states: &[Vec<f64>],
    noise: &NoisePath,
) -> Result<MartingaleIncrements> {
    let n = noise.grid.n_steps;
    if states.len() < n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: states.len(),
        });
    }
    let mut asm = IncrementAssembler::new(sys, noise)?;
    let mut dz = Vec::with_capacity(n);
    let mut realized_qv = Vec::with_capacity(n + 1);
    let mut predictable_qv = Vec::with_capacity(n + 1);
    let mut jump_cross = Vec::with_capacity(n);
    realized_qv.push(0.0);
    predictable_qv.push(0.0);
    for (m, x) in states.iter().take(n).enumerate() {
        sys.space().check(x.len())?;
        let mut out = vec![0.0; x.len()];
        let qv = asm.step(m, x, &mut out);
        dz.push(out);
        realized_qv.push(realized_qv[m] + qv.realized);
        predictable_qv.push(predictable_qv[m] + qv.predictable);
        jump_cross.push(qv.jump_cross);
    }
    Ok(MartingaleIncrements {
        dz,
        realized_qv,
        predictable_qv,
        jump_cross,
    })
}
