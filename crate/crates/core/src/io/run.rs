use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use super::config::{Command, RunConfig};
use super::output::{git_describe, iterates_csv, path_csv, paths_csv, to_json, write_atomic, Manifest};
use crate::coefficients::probe_system;
use crate::ensemble::map_paths;
use crate::error::Result;
use crate::hilbert::semigroup_contraction_audit;
use crate::noise::TimeGrid;
use crate::scenarios::{scenario, Scenario};
use crate::solver::PicardSettings;
use crate::verification::{
    continuity_gap, ito_check, kotelenez_check, markov_test, perturbed_pair, picard_ensemble, picard_rate_table,
    stability_decay, EnsembleConfig, Perturbation, TestFunctional,
};

/// Result of a run: overall verdict, the JSON report and a short human-readable summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub pass: bool,
    pub report: serde_json::Value,
    pub summary: String,
}

fn ensemble(cfg: &RunConfig, grid: TimeGrid) -> EnsembleConfig {
    let r = &cfg.run;
    EnsembleConfig {
        n_paths: cfg.effective_paths(),
        seed: r.seed,
        grid,
        bdg_c1: r.bdg_c1,
        confidence: r.confidence,
        workers: r.workers,
        solver: cfg.effective_solver(),
        picard: PicardSettings {
            tol: r.tol,
            max_rounds: r.max_rounds,
            run_all_rounds: false,
        },
    }
}

fn value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("reports serialise")
}

/// Builds the configured scenario (with the generator shift applied).
pub fn build_scenario(cfg: &RunConfig) -> Result<Scenario> {
    let mut sc = scenario(cfg.run.scenario, &cfg.scenario)?;
    sc.system = sc.system.with_alpha_shift(cfg.run.alpha_shift);
    Ok(sc)
}

/// Executes `cfg` and writes its artifacts into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let sc = build_scenario(cfg)?;
    let sys = &sc.system;
    let grid = TimeGrid::with_step(0.0, cfg.run.horizon, cfg.run.dt)?;
    let ens = ensemble(cfg, grid);
    let r = &cfg.run;

    let (pass, report, summary) = match cfg.command {
        Command::Simulate => {
            let paths = map_paths(ens.n_paths, ens.workers, |i| {
                let noise = ens.noise(sys, &grid, 0, i);
                ens.solve(sys, &sc.x0, &noise)
            })?;
            write_atomic(out, "path.csv", path_csv(&paths[0]).as_bytes())?;
            if paths.len() > 1 {
                write_atomic(out, "paths.csv", paths_csv(&paths).as_bytes())?;
            }
            let finals: Vec<f64> = paths.iter().map(|p| p.last().norm()).collect();
            let mean_final = finals.iter().sum::<f64>() / finals.len() as f64;
            let report = json!({
                "paths": paths.len(),
                "dim": sys.dim(),
                "mean_final_norm": mean_final,
            });
            (true, report, format!("simulated {} path(s); mean final norm {mean_final}", paths.len()))
        }
        Command::Picard => {
            let reports = picard_ensemble(sys, &sc.x0, &ens)?;
            let table = picard_rate_table(&reports, sys, grid.horizon(), r.bdg_c1, r.confidence);
            write_atomic(out, "iterates.csv", iterates_csv(&table.rows).as_bytes())?;
            write_atomic(out, "path.csv", path_csv(&reports[0].path).as_bytes())?;
            let converged = reports.iter().filter(|x| x.converged).count();
            let max_rounds = reports.iter().map(|x| x.rounds).max().unwrap_or(0);
            let pass = converged == reports.len();
            let report = json!({
                "paths": reports.len(),
                "converged": converged,
                "max_rounds_used": max_rounds,
                "rate_table": value(&table),
            });
            (
                pass,
                report,
                format!("{converged}/{} paths converged (at most {max_rounds} rounds); C1 = {}", reports.len(), table.c1),
            )
        }
        Command::VerifyIto => {
            let rep = ito_check(sys, &sc.x0, &ens, &[2, 4], r.ito_tolerance)?;
            let s = format!(
                "finest floor {} (tolerance {}), monotone {}",
                rep.levels[0].floor, rep.tolerance, rep.monotone
            );
            (rep.pass, value(&rep), s)
        }
        Command::VerifyKotelenez => {
            let rep = kotelenez_check(sys, &sc.x0, &ens, r.kotelenez_constant)?;
            let s = format!(
                "ratio {} (95% CI [{}, {}]) vs constant {}",
                rep.ratio, rep.ci_low, rep.ci_high, rep.constant
            );
            (rep.pass, value(&rep), s)
        }
        Command::VerifyContinuity => {
            let c = &cfg.continuity;
            let cases = [
                ("identical", Perturbation::Identical),
                ("initial_shift", Perturbation::InitialShift(c.initial_shift)),
                ("drift_shift", Perturbation::DriftShift(c.drift_shift)),
                ("noise_scale", Perturbation::NoiseScale(c.noise_scale)),
            ];
            let mut pass = true;
            let mut reports = serde_json::Map::new();
            let mut lines = Vec::new();
            for (name, p) in cases {
                let (s0, s1, x0, x1) = perturbed_pair(&sc, p)?;
                let rep = continuity_gap(&s0, &s1, &x0, &x1, &ens)?;
                pass &= rep.pass;
                lines.push(format!("{name}: lhs {} rhs {} pass {}", rep.lhs, rep.rhs, rep.pass));
                reports.insert(name.to_string(), value(&rep));
            }
            (pass, serde_json::Value::Object(reports), lines.join("\n"))
        }
        Command::VerifyStability => {
            let rep = stability_decay(sys, &sc.x0, &sc.y0, &ens, r.stability_slack)?;
            let s = format!(
                "gamma_bound {} fitted_rate {} (se {})",
                rep.gamma_bound, rep.fitted_rate, rep.fitted_rate_se
            );
            (rep.pass, value(&rep), s)
        }
        Command::VerifyMarkov => {
            let m = &cfg.markov;
            let reps = markov_test(sys, m.r, m.s, m.t, &sc.x0, &TestFunctional::ALL, &ens)?;
            let pass = reps.iter().all(|x| x.pass);
            let s = reps
                .iter()
                .map(|x| format!("{:?}: z = {}", x.functional, x.z_score))
                .collect::<Vec<_>>()
                .join("\n");
            let report = json!({
                "catalog_version": TestFunctional::CATALOG_VERSION,
                "tests": value(&reps),
            });
            (pass, report, s)
        }
        Command::Probe => {
            let probes = probe_system(sys, 2000, grid.horizon(), r.seed)?;
            let audit = semigroup_contraction_audit(&sys.semigroup, grid.horizon(), 200, r.seed)?;
            let lg = &probes.lipschitz_growth;
            let mut csv = String::from("quantity,declared,measured\n");
            csv.push_str(&format!("M,{},{}\n", sys.m(), probes.semimonotone.max_quotient));
            csv.push_str(&format!("C,{},{}\n", sys.c, lg.c_hat));
            csv.push_str(&format!("D,{},{}\n", sys.d, lg.d_hat));
            csv.push_str(&format!("alpha,{},{}\n", sys.alpha(), audit.max_ratio));
            write_atomic(out, "constants.csv", csv.as_bytes())?;
            let report = json!({
                "label": sys.label,
                "M": sys.m(),
                "C": sys.c,
                "D": sys.d,
                "alpha": sys.alpha(),
                "gamma": sys.stability_exponent(r.bdg_c1),
                "probes": value(&probes),
                "contraction_audit": value(&audit),
            });
            let summary = format!(
                "{}\n  M     declared {:<12} measured max quotient {}\n  C     declared {:<12} measured {}\n  D     declared {:<12} measured {}\n  alpha declared {:<12} max ||S_t x|| / (e^(alpha t) ||x||) {}",
                sys.label,
                sys.m(),
                probes.semimonotone.max_quotient,
                sys.c,
                lg.c_hat,
                sys.d,
                lg.d_hat,
                sys.alpha(),
                audit.max_ratio
            );
            (probes.pass && audit.pass, report, summary)
        }
    };

    let report = json!({
        "command": cfg.command.as_str(),
        "scenario": r.scenario.as_str(),
        "bdg_c1": r.bdg_c1,
        "pass": pass,
        "result": report,
    });
    write_atomic(out, "report.json", &to_json(&report)?)?;
    let manifest = Manifest {
        command: cfg.command.to_string(),
        scenario: r.scenario.to_string(),
        config_sha256: cfg.hash(),
        seed: r.seed,
        bdg_c1: r.bdg_c1,
        grid,
        paths: ens.n_paths,
        workers: r.workers,
        git_describe: git_describe(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    write_atomic(out, "manifest.json", &to_json(&manifest)?)?;
    Ok(RunOutcome { pass, report, summary })
}
