use std::sync::Arc;

use mildsolve::coefficients::{DiffusionCoefficient, DriftCoefficient, JumpCoefficient, JumpIntensity, SystemSpec};
use mildsolve::convolution::{stochastic_convolution, stochastic_convolution_direct};
use mildsolve::hilbert::{SemigroupRep, SpaceSpec, StateVector};
use mildsolve::noise::{assemble_increments, sample_noise, TimeGrid};
use mildsolve::solver::{picard_solve, resolvent_step, PicardSettings};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn space(weights: Vec<f64>) -> Arc<SpaceSpec> {
    Arc::new(SpaceSpec::new(weights, "test").unwrap())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dissipative_generator(raw: &[f64], j: usize) -> DMatrix<f64> {
    let b = DMatrix::from_column_slice(j, j, raw);
    let skew = (&b - b.transpose()) * 0.5;
    let sym = &b * b.transpose();
    skew - sym
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diagonal_semigroup_law(
        lam in prop::collection::vec(0.0f64..50.0, 1..6),
        t in 0.0f64..2.0,
        s in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let j = lam.len();
        let sp = space(vec![1.0; j]);
        let rep = SemigroupRep::diagonal(lam, 0.0, sp.clone()).unwrap();
        let x: Vec<f64> = (0..j).map(|i| ((seed >> i) % 7) as f64 - 3.0).collect();
        let x = StateVector::new(x, sp).unwrap();
        let direct = rep.apply(t + s, &x).unwrap();
        let composed = rep.apply(t, &rep.apply(s, &x).unwrap()).unwrap();
        prop_assert!(max_abs_diff(direct.coords(), composed.coords()) < 1e-9);
        let id = rep.apply(0.0, &x).unwrap();
        prop_assert_eq!(id.coords(), x.coords());
    }

    #[test]
    fn dense_semigroup_law_and_contraction(
        raw in prop::collection::vec(-1.0f64..1.0, 9),
        t in 0.0f64..1.5,
        s in 0.0f64..1.5,
        x in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let sp = space(vec![1.0; 3]);
        let rep = SemigroupRep::dense(dissipative_generator(&raw, 3), 0.0, sp.clone()).unwrap();
        let x = StateVector::new(x, sp).unwrap();
        let direct = rep.apply(t + s, &x).unwrap();
        let composed = rep.apply(t, &rep.apply(s, &x).unwrap()).unwrap();
        prop_assert!(max_abs_diff(direct.coords(), composed.coords()) < 1e-9);
        prop_assert!(direct.norm() <= x.norm() * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn hyperbolic_energy_is_conserved(
        lam in prop::collection::vec(0.1f64..400.0, 1..5),
        t in 0.0f64..5.0,
        x in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let j = lam.len();
        let sp = Arc::new(SpaceSpec::hyperbolic_energy(&lam, 0).unwrap());
        let rep = SemigroupRep::hyperbolic(&lam, 0.0, sp.clone()).unwrap();
        let x = StateVector::new(x[..2 * j].to_vec(), sp).unwrap();
        let y = rep.apply(t, &x).unwrap();
        prop_assert!((y.norm_sq() - x.norm_sq()).abs() <= 1e-12 * x.norm_sq().max(1.0));
    }

    #[test]
    fn recursive_convolution_equals_double_sum(
        lam in prop::collection::vec(0.0f64..20.0, 4),
        dz in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 16),
    ) {
        let sp = space(vec![1.0, 0.5, 2.0, 1.0]);
        let rep = SemigroupRep::diagonal(lam, 0.0, sp).unwrap();
        let grid = TimeGrid::new(0.0, 0.8, dz.len()).unwrap();
        let fast = stochastic_convolution(&rep, &dz, &grid).unwrap();
        let slow = stochastic_convolution_direct(&rep, &dz, &grid).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!(max_abs_diff(a, b) < 1e-12);
        }
    }

    #[test]
    fn resolvent_solves_its_equation(
        b in prop::collection::vec(-10.0f64..10.0, 1..5),
        h in 1e-4f64..0.9,
        t in 0.0f64..1.0,
    ) {
        let f = DriftCoefficient::separable(1.0, |_t, _i, a| a - a * a * a);
        let sp = space(vec![1.0; b.len()]);
        let bv = StateVector::new(b.clone(), sp).unwrap();
        let y = resolvent_step(&f, t, h, &bv).unwrap();
        let fy = f.eval(t, &y);
        for i in 0..b.len() {
            let r = y.coords()[i] - h * fy.coords()[i] - b[i];
            prop_assert!(r.abs() <= 1e-9 * (1.0 + b[i].abs()), "residual {r}");
        }
    }

    #[test]
    fn resolvent_is_lipschitz_with_margin(
        a in -5.0f64..5.0,
        c in -5.0f64..5.0,
        h in 1e-3f64..0.5,
    ) {
        let m = 1.0;
        let f = DriftCoefficient::separable(m, |_t, _i, x| x - x * x * x);
        let sp = space(vec![1.0]);
        let ya = resolvent_step(&f, 0.0, h, &StateVector::new(vec![a], sp.clone()).unwrap()).unwrap();
        let yc = resolvent_step(&f, 0.0, h, &StateVector::new(vec![c], sp).unwrap()).unwrap();
        let lhs = (ya.coords()[0] - yc.coords()[0]).abs();
        prop_assert!(lhs <= (a - c).abs() / (1.0 - h * m) + 1e-9);
    }

    #[test]
    fn noise_is_reproducible_per_stream(seed in any::<u64>(), stream in 0u64..1000) {
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let nu = JumpIntensity::new(vec![(vec![1.0], 2.0), (vec![-0.5], 1.0)]).unwrap();
        let a = sample_noise(&grid, 2, &nu, seed, stream);
        let b = sample_noise(&grid, 2, &nu, seed, stream);
        prop_assert_eq!(&a, &b);
        let c = sample_noise(&grid, 2, &nu, seed, stream + 1);
        prop_assert_ne!(a.wiener, c.wiener);
        for w in a.jumps.windows(2) {
            prop_assert!(w[0].time <= w[1].time);
        }
        for e in &a.jumps {
            prop_assert!(e.time > grid.t0 && e.time <= grid.t_end);
        }
    }

    #[test]
    fn quadratic_variations_are_nondecreasing(seed in any::<u64>()) {
        let sys = linear_system(1.0, 0.7, Some(0.4));
        let grid = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let noise = sample_noise(&grid, 1, sys.k.intensity(), seed, 0);
        let states = vec![vec![1.0]; 41];
        let inc = assemble_increments(&sys, &states, &noise).unwrap();
        prop_assert_eq!(inc.dz.len(), 40);
        for w in inc.realized_qv.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        for w in inc.predictable_qv.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }
}

fn linear_system(lambda: f64, g: f64, jump: Option<f64>) -> SystemSpec {
    let sp = space(vec![1.0]);
    let k = match jump {
        Some(scale) => JumpCoefficient::new(JumpIntensity::single(1.0, 3.0).unwrap(), move |_t, xi, _x, out| {
            out[0] = scale * xi[0]
        }),
        None => JumpCoefficient::zero(),
    };
    SystemSpec {
        label: "linear".into(),
        semigroup: SemigroupRep::diagonal(vec![lambda], 0.0, sp).unwrap(),
        f: DriftCoefficient::zero(),
        g: DiffusionCoefficient::new(1, move |_t, _x, out| out[0] = g),
        k,
        c: 0.0,
        d: g * g + jump.map_or(0.0, |s| 3.0 * s * s),
        probe_radius: 2.0,
    }
}

#[test]
fn martingale_increments_have_mean_zero() {
    let sys = linear_system(0.0, 0.5, Some(1.0));
    let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let states = vec![vec![0.0]; 11];
    let n = 20_000;
    let totals: Vec<f64> = (0..n)
        .map(|i| {
            let noise = sample_noise(&grid, 1, sys.k.intensity(), 11, i);
            let inc = assemble_increments(&sys, &states, &noise).unwrap();
            inc.dz.iter().map(|d| d[0]).sum()
        })
        .collect();
    let mean = totals.iter().sum::<f64>() / n as f64;
    // variance of the sum is 0.25 + 3
    let se = (3.25f64 / n as f64).sqrt();
    assert!(mean.abs() < 4.0 * se, "mean {mean} se {se}");
}

#[test]
fn realized_and_predictable_variation_agree_in_mean() {
    let sys = linear_system(0.0, 0.5, Some(1.0));
    let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let states = vec![vec![0.0]; 11];
    let n = 20_000;
    let mut diffs = Vec::with_capacity(n);
    let mut predictable = 0.0;
    for i in 0..n {
        let noise = sample_noise(&grid, 1, sys.k.intensity(), 5, i as u64);
        let inc = assemble_increments(&sys, &states, &noise).unwrap();
        predictable = inc.predictable_qv[10];
        diffs.push(inc.realized_qv[10] - inc.predictable_qv[10]);
    }
    assert!((predictable - 3.25).abs() < 1e-12);
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    assert!(mean.abs() < 4.0 * (var / n as f64).sqrt(), "mean {mean}");
}

#[test]
fn picard_is_equivariant_under_exponential_tilt() {
    let sp = space(vec![1.0]);
    let sys = SystemSpec {
        label: "cubic".into(),
        semigroup: SemigroupRep::diagonal(vec![1.0], 0.0, sp.clone()).unwrap(),
        f: DriftCoefficient::separable(0.0, |_t, _i, x| -x * x * x),
        g: DiffusionCoefficient::new(1, |_t, x, out| out[0] = 0.3 * x[0]),
        k: JumpCoefficient::new(JumpIntensity::single(1.0, 1.0).unwrap(), |_t, xi, x, out| {
            out[0] = 0.2 * xi[0] * x[0]
        }),
        c: 0.13,
        d: 16.2,
        probe_radius: 2.0,
    };
    let a = 0.7;
    let tilted = sys.tilted(a);
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let x0 = StateVector::new(vec![1.0], sp).unwrap();
    let settings = PicardSettings {
        tol: 1e-12,
        max_rounds: 30,
        run_all_rounds: false,
    };
    for seed in 0..5 {
        let noise = sample_noise(&grid, 1, sys.k.intensity(), seed, 0);
        let plain = picard_solve(&sys, &x0, &noise, &settings).unwrap();
        let tilt = picard_solve(&tilted, &x0, &noise, &settings).unwrap();
        assert!(plain.converged && tilt.converged);
        for n in 0..=grid.n_steps {
            let back = tilt.path.states[n][0] * (a * grid.time(n)).exp();
            assert!((back - plain.path.states[n][0]).abs() < 1e-8, "seed {seed} step {n}");
        }
    }
}

#[test]
fn wiener_and_jump_streams_are_uncorrelated() {
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let nu = JumpIntensity::single(1.0, 2.0).unwrap();
    let n = 10_000;
    let pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let p = sample_noise(&grid, 1, &nu, 17, i);
            (p.wiener.iter().sum::<f64>(), p.jumps.len() as f64)
        })
        .collect();
    let mean = |f: &dyn Fn(&(f64, f64)) -> f64| pairs.iter().map(f).sum::<f64>() / n as f64;
    let (mw, mj) = (mean(&|p| p.0), mean(&|p| p.1));
    let cov = mean(&|p| (p.0 - mw) * (p.1 - mj));
    let sw = mean(&|p| (p.0 - mw).powi(2)).sqrt();
    let sj = mean(&|p| (p.1 - mj).powi(2)).sqrt();
    let corr = cov / (sw * sj);
    assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "correlation {corr}");
}
