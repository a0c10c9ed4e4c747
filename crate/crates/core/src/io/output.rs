use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::TimeGrid;
use crate::path::SimulationPath;
use crate::verification::PicardRateRow;

/// Writes `contents` to `dir/name` through a temporary file in the same directory.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

fn header(out: &mut String, lead: &str, dim: usize) {
    out.push_str(lead);
    for j in 0..dim {
        let _ = write!(out, ",coord_{j}");
    }
    out.push('\n');
}

fn row(out: &mut String, lead: &str, t: f64, x: &[f64]) {
    out.push_str(lead);
    let _ = write!(out, "{t}");
    for v in x {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
}

/// `t,coord_0,...` with shortest round-trip floats.
pub fn path_csv(path: &SimulationPath) -> String {
    let mut out = String::new();
    header(&mut out, "t", path.space.dim());
    for (n, x) in path.states.iter().enumerate() {
        row(&mut out, "", path.grid.time(n), x);
    }
    out
}

/// `path,t,coord_0,...` for several paths in index order.
pub fn paths_csv(paths: &[SimulationPath]) -> String {
    let mut out = String::new();
    let dim = paths.first().map_or(0, |p| p.space.dim());
    header(&mut out, "path,t", dim);
    for (i, p) in paths.iter().enumerate() {
        let lead = format!("{i},");
        for (n, x) in p.states.iter().enumerate() {
            row(&mut out, &lead, p.grid.time(n), x);
        }
    }
    out
}

/// `n,h_n,bound`.
pub fn iterates_csv(rows: &[PicardRateRow]) -> String {
    let mut out = String::from("n,h_n,bound\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.n, r.h, r.bound);
    }
    out
}

/// Run provenance written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub bdg_c1: f64,
    pub grid: TimeGrid,
    pub paths: usize,
    pub workers: usize,
    pub git_describe: String,
    pub crate_version: String,
    pub wall_time_seconds: f64,
}

/// `git describe --always --dirty`, or `"unknown"` outside a repository.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}
