//! Acceptance criteria. Each test prints one `criterion N ... PASS|FAIL` line.
//!
//! Tests hold a shared lock so that the wall-time budgets are measured one at a time.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use mildsolve::convolution::{stochastic_convolution, stochastic_convolution_direct};
use mildsolve::hilbert::{semigroup_contraction_audit, SemigroupRep, SpaceSpec, StateVector};
use mildsolve::io::{run, Command, RunConfig};
use mildsolve::noise::TimeGrid;
use mildsolve::scenarios::{scenario, ScenarioName, ScenarioParams};
use mildsolve::solver::PicardSettings;
use mildsolve::verification::{
    continuity_gap, ito_check, kotelenez_check, markov_test, perturbed_pair, picard_ensemble, picard_rate_report,
    scheme_gap, stability_decay, EnsembleConfig, Perturbation, SolverKind, TestFunctional,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

static SERIAL: Mutex<()> = Mutex::new(());

const SEED: u64 = 0;

fn report(id: u32, name: &str, pass: bool, budget: Duration, started: Instant, detail: String) {
    let elapsed = started.elapsed();
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    println!(
        "criterion {id:>2} {name}: {} ({detail}; {:.1}s of {}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
    assert!(in_time, "criterion {id} ({name}) exceeded {budget:?}: {elapsed:?}");
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn preset(name: ScenarioName) -> mildsolve::scenarios::Scenario {
    scenario(name, &ScenarioParams::default()).unwrap()
}

fn random_state(space: &Arc<SpaceSpec>, rng: &mut ChaCha8Rng) -> StateVector {
    let x = (0..space.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    StateVector::new(x, space.clone()).unwrap()
}

fn max_gap(a: &StateVector, b: &StateVector) -> f64 {
    a.coords().iter().zip(b.coords()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_01_semigroup_exactness() {
    let _g = lock();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_law: f64 = 0.0;
    let mut failed_audits = Vec::new();
    for name in ScenarioName::ALL {
        let sc = preset(name);
        let rep = &sc.system.semigroup;
        for _ in 0..5 {
            let x = random_state(rep.space(), &mut rng);
            let (t, s) = (rng.random::<f64>(), rng.random::<f64>());
            let scale = x.coords().iter().fold(1.0f64, |m, c| m.max(c.abs()));
            worst_law = worst_law.max(max_gap(&rep.apply(0.0, &x).unwrap(), &x) / scale);
            let lhs = rep.apply(t + s, &x).unwrap();
            let rhs = rep.apply(t, &rep.apply(s, &x).unwrap()).unwrap();
            worst_law = worst_law.max(max_gap(&lhs, &rhs) / scale);
        }
        let audit = semigroup_contraction_audit(rep, 1.0, 200, SEED).unwrap();
        if !audit.pass {
            failed_audits.push(format!("{}: {}", name.as_str(), audit.max_ratio));
        }
    }
    let wave = preset(ScenarioName::Hyperbolic);
    let rep = &wave.system.semigroup;
    let mut worst_energy: f64 = 0.0;
    for _ in 0..20 {
        let x = random_state(rep.space(), &mut rng);
        let t = 10.0 * rng.random::<f64>();
        let y = rep.apply(t, &x).unwrap();
        worst_energy = worst_energy.max((y.norm_sq() - x.norm_sq()).abs() / x.norm_sq());
    }
    let pass = worst_law <= 1e-9 && failed_audits.is_empty() && worst_energy <= 1e-12;
    report(
        1,
        "semigroup exactness",
        pass,
        Duration::from_secs(5),
        started,
        format!("law error {worst_law:.2e}, energy drift {worst_energy:.2e}, failed audits {failed_audits:?}"),
    );
}

#[test]
fn criterion_02_convolution_oracle() {
    let _g = lock();
    let started = Instant::now();
    let space = Arc::new(SpaceSpec::new(vec![1.0, 0.5, 2.0, 1.5], "four").unwrap());
    let grid = TimeGrid::new(0.0, 1.0, 64).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rep = if seed % 2 == 0 {
            let lam = (0..4).map(|_| 30.0 * rng.random::<f64>()).collect();
            SemigroupRep::diagonal(lam, 0.0, space.clone()).unwrap()
        } else {
            let b = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
            SemigroupRep::dense(&b - b.transpose() - &b * b.transpose(), 0.0, space.clone()).unwrap()
        };
        let dz: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let fast = stochastic_convolution(&rep, &dz, &grid).unwrap();
        let slow = stochastic_convolution_direct(&rep, &dz, &grid).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    report(
        2,
        "convolution oracle equivalence",
        worst < 1e-10,
        Duration::from_secs(5),
        started,
        format!("max deviation {worst:.2e} over 100 seeds"),
    );
}

#[test]
fn criterion_03_ito_inequality() {
    let _g = lock();
    let started = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in [
        ScenarioName::Delay,
        ScenarioName::ParabolicFindim,
        ScenarioName::ParabolicSpacetime,
        ScenarioName::Hyperbolic,
    ] {
        let sc = preset(name);
        let cfg = EnsembleConfig::new(1000, SEED, TimeGrid::new(0.0, 1.0, 1000).unwrap());
        let rep = ito_check(&sc.system, &sc.x0, &cfg, &[2, 4], 0.05).unwrap();
        pass &= rep.pass;
        let floors: Vec<String> = rep.levels.iter().map(|l| format!("{:.4}", l.floor)).collect();
        parts.push(format!("{} floors [{}]{}", name.as_str(), floors.join(", "), if rep.pass { "" } else { " FAIL" }));
    }
    report(
        3,
        "Ito-type inequality",
        pass,
        Duration::from_secs(120),
        started,
        parts.join("; "),
    );
}

#[test]
fn criterion_04_maximal_inequality() {
    let _g = lock();
    let started = Instant::now();
    let cfg = EnsembleConfig::new(10_000, SEED, TimeGrid::new(0.0, 1.0, 1000).unwrap());
    let mut pass = true;
    let mut parts = Vec::new();
    for name in [
        ScenarioName::WienerIdentity,
        ScenarioName::Ou,
        ScenarioName::OuJumps,
        ScenarioName::Cubic,
        ScenarioName::Stability,
    ] {
        let sc = preset(name);
        let rep = kotelenez_check(&sc.system, &sc.x0, &cfg, 16.0).unwrap();
        pass &= rep.pass;
        parts.push(format!("{} {:.3} [{:.3}, {:.3}]", name.as_str(), rep.ratio, rep.ci_low, rep.ci_high));
    }
    let free = preset(ScenarioName::WienerIdentity);
    let doob = kotelenez_check(&free.system, &free.x0, &cfg, 16.0).unwrap();
    let doob_ok = doob.ratio <= 4.0 + (doob.ci_high - doob.ci_low) / 2.0;
    let mut stiff = free.system.clone();
    stiff.semigroup = SemigroupRep::diagonal(vec![10.0], 0.0, free.system.space().clone()).unwrap();
    let contracted = kotelenez_check(&stiff, &free.x0, &cfg, 16.0).unwrap();
    let order_ok = contracted.ratio < doob.ratio;
    parts.push(format!("lambda 10: {:.3} < lambda 0: {:.3}", contracted.ratio, doob.ratio));
    report(
        4,
        "maximal inequality",
        pass && doob_ok && order_ok,
        Duration::from_secs(120),
        started,
        parts.join("; "),
    );
}

#[test]
fn criterion_05_picard_contraction() {
    let _g = lock();
    let started = Instant::now();
    let sc = preset(ScenarioName::Cubic);
    let mut cfg = EnsembleConfig::new(200, SEED, sc.grid);
    cfg.solver = SolverKind::Picard;
    let converged = picard_ensemble(&sc.system, &sc.x0, &cfg).unwrap();
    let all_converged = converged.iter().all(|r| r.converged && r.rounds <= 12);
    let most_rounds = converged.iter().map(|r| r.rounds).max().unwrap();

    cfg.picard = PicardSettings {
        tol: f64::MIN_POSITIVE,
        max_rounds: 10,
        run_all_rounds: true,
    };
    let deep = picard_ensemble(&sc.system, &sc.x0, &cfg).unwrap();
    let table = picard_rate_report(&deep, &sc.system, 1.0, 2.0, 4.0).unwrap();
    let mut ratios_ok = true;
    let mut shown = Vec::new();
    for (n, r) in table.ratios() {
        if (3..=8).contains(&n) {
            let bound = 2.0 * table.c1 / (n as f64 + 1.0);
            ratios_ok &= r <= bound;
            shown.push(format!("n={n}: {r:.3} <= {bound:.3}"));
        }
    }
    report(
        5,
        "Picard contraction",
        all_converged && ratios_ok && (table.c1 - 2.34).abs() < 1e-12,
        Duration::from_secs(180),
        started,
        format!(
            "C1 = {}, converged {} (max {most_rounds} rounds), {}",
            table.c1,
            all_converged,
            shown.join(", ")
        ),
    );
}

#[test]
fn criterion_06_uniqueness_surrogate() {
    let _g = lock();
    let started = Instant::now();
    let sc = preset(ScenarioName::Cubic);
    let cfg = EnsembleConfig::new(200, SEED, TimeGrid::new(0.0, 1.0, 2000).unwrap());
    let rep = scheme_gap(&sc.system, &sc.x0, &cfg, 3, 0.3).unwrap();
    let gaps: Vec<String> = rep.levels.iter().map(|l| format!("{}: {:.3e}", l.dt, l.gap)).collect();
    report(
        6,
        "uniqueness surrogate",
        rep.pass,
        Duration::from_secs(180),
        started,
        format!("gaps [{}], halving ratios {:.3?}", gaps.join(", "), rep.halving_ratios),
    );
}

#[test]
fn criterion_07_continuity_bound() {
    let _g = lock();
    let started = Instant::now();
    let sc = preset(ScenarioName::ParabolicFindim);
    let cfg = EnsembleConfig::new(1000, SEED, sc.grid);
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, p) in [
        ("identical", Perturbation::Identical),
        ("initial shift", Perturbation::InitialShift(0.1)),
        ("drift shift", Perturbation::DriftShift(0.1)),
        ("noise scale", Perturbation::NoiseScale(1.1)),
    ] {
        let (s0, s1, x0, x1) = perturbed_pair(&sc, p).unwrap();
        let rep = continuity_gap(&s0, &s1, &x0, &x1, &cfg).unwrap();
        let ok = if matches!(p, Perturbation::Identical) {
            rep.lhs == 0.0 && rep.pass
        } else {
            rep.pass
        };
        pass &= ok;
        parts.push(format!("{label}: lhs {:.3e} rhs {:.3e}", rep.lhs, rep.rhs));
    }
    report(
        7,
        "continuity bound",
        pass,
        Duration::from_secs(120),
        started,
        parts.join("; "),
    );
}

#[test]
fn criterion_08_stability() {
    let _g = lock();
    let started = Instant::now();
    let sc = preset(ScenarioName::Stability);
    let cfg = EnsembleConfig::new(1000, SEED, sc.grid);
    let rep = stability_decay(&sc.system, &sc.x0, &sc.y0, &cfg, 0.2).unwrap();
    let gamma_ok = (rep.gamma_bound - (-14.4)).abs() < 1e-12;
    report(
        8,
        "stability",
        rep.pass && gamma_ok && rep.fitted_rate + 4.0 * rep.fitted_rate_se < 0.0,
        Duration::from_secs(120),
        started,
        format!(
            "gamma {:.4}, fitted rate {:.3} (se {:.3}), final {:.3e} <= {:.3e}",
            rep.gamma_bound, rep.fitted_rate, rep.fitted_rate_se, rep.final_mean_sq, rep.final_bound
        ),
    );
}

#[test]
fn criterion_09_markov_property() {
    let _g = lock();
    let started = Instant::now();
    let sc = preset(ScenarioName::OuJumps);
    let mut exceedances = 0;
    let mut worst: f64 = 0.0;
    for master in 0..20u64 {
        let cfg = EnsembleConfig::new(10_000, master, sc.grid);
        let reps = markov_test(&sc.system, 0.0, 0.5, 1.0, &sc.x0, &TestFunctional::ALL, &cfg).unwrap();
        for r in reps {
            worst = worst.max(r.z_score.abs());
            if !r.pass {
                exceedances += 1;
            }
        }
    }
    report(
        9,
        "Markov property",
        exceedances <= 1,
        Duration::from_secs(300),
        started,
        format!("{exceedances} of 60 tests with |z| > 4, max |z| {worst:.2}"),
    );
}

#[test]
fn criterion_10_delay_example() {
    let _g = lock();
    let started = Instant::now();
    let params = ScenarioParams {
        zero_noise: true,
        zero_drift: true,
        delay_nodes: Some(128),
        ..ScenarioParams::default()
    };
    let sc = scenario(ScenarioName::Delay, &params).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 1000).unwrap();
    let cfg = EnsembleConfig::new(1, SEED, grid);
    let noise = cfg.noise(&sc.system, &grid, 0, 0);
    let path = cfg.solve(&sc.system, &sc.x0, &noise).unwrap();
    let worst = (0..=grid.n_steps)
        .map(|n| (path.states[n][0] - (1.0 - grid.time(n))).abs())
        .fold(0.0, f64::max);
    report(
        10,
        "delay example",
        worst <= 2e-2,
        Duration::from_secs(30),
        started,
        format!("max |x(t) - (1 - t)| = {worst:.3e}"),
    );
}

#[test]
fn criterion_11_reproducibility() {
    let _g = lock();
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut compared = 0;
    for (command, name, files) in [
        (Command::Simulate, ScenarioName::ParabolicSpacetime, &["path.csv", "paths.csv"][..]),
        (Command::Picard, ScenarioName::Cubic, &["path.csv", "iterates.csv"][..]),
    ] {
        let mut outputs = Vec::new();
        for workers in [1usize, 8, 1] {
            let mut cfg = RunConfig::new(command);
            cfg.run.scenario = name;
            cfg.run.seed = 42;
            cfg.run.paths = Some(24);
            cfg.run.workers = workers;
            let out = dir.path().join(format!("{}-{workers}-{}", command.as_str(), outputs.len()));
            run(&cfg, &out).unwrap();
            outputs.push(files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect::<Vec<_>>());
        }
        for other in &outputs[1..] {
            for (a, b) in outputs[0].iter().zip(other) {
                identical &= a == b;
                compared += 1;
            }
        }
    }
    report(
        11,
        "reproducibility",
        identical,
        Duration::from_secs(60),
        started,
        format!("{compared} CSV comparisons across 1 and 8 workers, all byte-identical: {identical}"),
    );
}
