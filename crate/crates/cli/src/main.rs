use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mildsolve::io::{run, Command, RunConfig};
use mildsolve::scenarios::ScenarioName;

#[derive(Parser)]
#[command(name = "mildsolve", version, about = "Mild-solution simulator and inequality checks for stochastic evolution equations")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate one or more paths and write path.csv.
    Simulate(Flags),
    /// Run Picard iteration and write iterates.csv.
    Picard(Flags),
    /// Check the Ito-type inequality for the stochastic convolution.
    VerifyIto(Flags),
    /// Check the maximal inequality ratio against a constant.
    VerifyKotelenez(Flags),
    /// Check the continuous-dependence bound on shipped perturbations.
    VerifyContinuity(Flags),
    /// Check exponential mean-square stability.
    VerifyStability(Flags),
    /// Compare direct and two-stage transition expectations.
    VerifyMarkov(Flags),
    /// Probe the declared coefficient constants and semigroup bound.
    Probe(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML run file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    bdg_c1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    alpha_shift: Option<f64>,
}

fn split(sub: Sub) -> (Command, Flags) {
    match sub {
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Picard(f) => (Command::Picard, f),
        Sub::VerifyIto(f) => (Command::VerifyIto, f),
        Sub::VerifyKotelenez(f) => (Command::VerifyKotelenez, f),
        Sub::VerifyContinuity(f) => (Command::VerifyContinuity, f),
        Sub::VerifyStability(f) => (Command::VerifyStability, f),
        Sub::VerifyMarkov(f) => (Command::VerifyMarkov, f),
        Sub::Probe(f) => (Command::Probe, f),
    }
}

fn build(command: Command, f: &Flags) -> mildsolve::Result<RunConfig> {
    let mut cfg = match &f.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut c = RunConfig::from_toml(&text)?;
            c.command = command;
            c
        }
        None => RunConfig::new(command),
    };
    let r = &mut cfg.run;
    if let Some(s) = &f.scenario {
        r.scenario = s.parse::<ScenarioName>()?;
    }
    if let Some(v) = f.seed {
        r.seed = v;
    }
    if f.paths.is_some() {
        r.paths = f.paths;
    }
    if let Some(v) = f.dt {
        r.dt = v;
    }
    if let Some(v) = f.horizon {
        r.horizon = v;
    }
    if let Some(v) = f.tol {
        r.tol = v;
    }
    if let Some(v) = f.max_rounds {
        r.max_rounds = v;
    }
    if let Some(v) = f.workers {
        r.workers = v;
    }
    if let Some(v) = f.bdg_c1 {
        r.bdg_c1 = v;
    }
    if let Some(v) = f.alpha_shift {
        r.alpha_shift = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (command, flags) = split(Cli::parse().command);
    let result = build(command, &flags).and_then(|cfg| run(&cfg, &flags.out));
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            println!("{}: {}", command, if outcome.pass { "PASS" } else { "FAIL" });
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
