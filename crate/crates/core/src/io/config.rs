use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scenarios::{ScenarioName, ScenarioParams};
use crate::verification::SolverKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Picard,
    VerifyIto,
    VerifyKotelenez,
    VerifyContinuity,
    VerifyStability,
    VerifyMarkov,
    Probe,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Simulate,
        Command::Picard,
        Command::VerifyIto,
        Command::VerifyKotelenez,
        Command::VerifyContinuity,
        Command::VerifyStability,
        Command::VerifyMarkov,
        Command::Probe,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Picard => "picard",
            Command::VerifyIto => "verify-ito",
            Command::VerifyKotelenez => "verify-kotelenez",
            Command::VerifyContinuity => "verify-continuity",
            Command::VerifyStability => "verify-stability",
            Command::VerifyMarkov => "verify-markov",
            Command::Probe => "probe",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown command '{s}'")))
    }
}

/// Run-level settings. Times are in the model's time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub scenario: ScenarioName,
    pub seed: u64,
    /// Number of paths; defaults to 1 for single-path commands and 1000 for checks.
    pub paths: Option<usize>,
    /// Time step.
    pub dt: f64,
    /// Final time `T` (runs start at 0).
    pub horizon: f64,
    /// Picard stopping tolerance on `sup_t ||X^n - X^{n-1}||`.
    pub tol: f64,
    pub max_rounds: usize,
    pub workers: usize,
    /// Burkholder-Davis-Gundy constant.
    pub bdg_c1: f64,
    /// Added to the generator (shifts the growth bound).
    pub alpha_shift: f64,
    /// Standard-error multiplier for statistical decisions.
    pub confidence: f64,
    /// Threshold for the maximal-inequality ratio.
    pub kotelenez_constant: f64,
    /// Relative tolerance on the Ito-type residual at the finest grid.
    pub ito_tolerance: f64,
    /// Relative slack on the final stability bound.
    pub stability_slack: f64,
    /// Path solver; defaults to Picard for single-path commands and the direct scheme
    /// for ensemble checks.
    pub solver: Option<SolverKind>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            scenario: ScenarioName::ParabolicFindim,
            seed: 0,
            paths: None,
            dt: 1e-3,
            horizon: 1.0,
            tol: 1e-6,
            max_rounds: 12,
            workers: 1,
            bdg_c1: 2.0,
            alpha_shift: 0.0,
            confidence: 4.0,
            kotelenez_constant: 16.0,
            ito_tolerance: 0.05,
            stability_slack: 0.2,
            solver: None,
        }
    }
}

/// Times for the Markov check, `r <= s <= t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkovSection {
    pub r: f64,
    pub s: f64,
    pub t: f64,
}

impl Default for MarkovSection {
    fn default() -> Self {
        MarkovSection { r: 0.0, s: 0.5, t: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuitySection {
    /// Size of the initial-state shift.
    pub initial_shift: f64,
    /// Constant added to the drift.
    pub drift_shift: f64,
    /// Factor applied to diffusion and jump coefficients.
    pub noise_scale: f64,
}

impl Default for ContinuitySection {
    fn default() -> Self {
        ContinuitySection {
            initial_shift: 0.1,
            drift_shift: 0.1,
            noise_scale: 1.1,
        }
    }
}

/// Complete run description, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub scenario: ScenarioParams,
    #[serde(default)]
    pub markov: MarkovSection,
    #[serde(default)]
    pub continuity: ContinuitySection,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            run: RunSection::default(),
            scenario: ScenarioParams::default(),
            markov: MarkovSection::default(),
            continuity: ContinuitySection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("schema violation: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        let bad = |key: &str, why: &str| Err(Error::Config(format!("run.{key}: {why}")));
        if !(r.dt > 0.0 && r.dt.is_finite()) {
            return bad("dt", "must be > 0");
        }
        if !(r.horizon > 0.0 && r.horizon.is_finite()) {
            return bad("horizon", "must be > 0");
        }
        if r.paths == Some(0) {
            return bad("paths", "must be >= 1");
        }
        if r.workers == 0 {
            return bad("workers", "must be >= 1");
        }
        if !(r.tol > 0.0) {
            return bad("tol", "must be > 0");
        }
        if r.max_rounds == 0 {
            return bad("max_rounds", "must be >= 1");
        }
        if !(r.bdg_c1 > 0.0) {
            return bad("bdg_c1", "must be > 0");
        }
        if !(r.confidence > 0.0) {
            return bad("confidence", "must be > 0");
        }
        if !r.alpha_shift.is_finite() {
            return bad("alpha_shift", "must be finite");
        }
        let m = &self.markov;
        if !(m.r <= m.s && m.s <= m.t && m.r < m.t) {
            return Err(Error::Config("markov: need r <= s <= t and r < t".into()));
        }
        Ok(())
    }

    fn is_check(&self) -> bool {
        !matches!(self.command, Command::Simulate | Command::Picard | Command::Probe)
    }

    pub fn effective_paths(&self) -> usize {
        self.run.paths.unwrap_or(if self.is_check() { 1000 } else { 1 })
    }

    pub fn effective_solver(&self) -> SolverKind {
        self.run.solver.unwrap_or(if self.is_check() { SolverKind::Direct } else { SolverKind::Picard })
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
