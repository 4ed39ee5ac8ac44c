//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. `system` and `region` are required;
//! every other key has a default. `region` is a comma-separated list of
//! `lower:upper` pairs, one per state coordinate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cpa_gain::analysis::{default_epsilon, GainOptions, MeshSpec};
use cpa_gain::geometry::{BoxRegion, KuhnSplit};
use cpa_gain::lmi::Mode;
use cpa_gain::sdp::SolveOptions;
use cpa_gain::{Error, Result};

pub const KEYS: &[&str] = &[
    "system",
    "region",
    "mode",
    "epsilon",
    "mesh.divisions",
    "mesh.levels",
    "mesh.split",
    "mesh.segments",
    "solver.tol",
    "solver.max_iters",
    "check.samples",
    "check.tol",
    "check.seed",
    "simulate.inputs",
    "simulate.r_u",
    "simulate.horizon",
    "simulate.dt",
    "simulate.components",
    "simulate.max_freq",
    "output.certificate",
    "output.sweep",
    "output.check",
    "output.simulations",
    "output.mesh",
    "timing",
    "threads",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub system: String,
    pub region: BoxRegion,
    pub mode: Mode,
    pub epsilon: Option<f64>,
    pub divisions: Vec<usize>,
    pub levels: usize,
    pub split: KuhnSplit,
    pub segments: usize,
    pub solver_tol: f64,
    pub solver_max_iters: u32,
    pub check_samples: usize,
    pub check_tol: f64,
    pub seed: u64,
    pub sim_inputs: usize,
    pub r_u: f64,
    pub horizon: f64,
    pub dt: f64,
    pub components: usize,
    pub max_freq: f64,
    pub certificate: PathBuf,
    pub sweep: PathBuf,
    pub check: PathBuf,
    pub simulations: PathBuf,
    pub mesh: PathBuf,
    pub timing: bool,
    pub threads: usize,
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key '{k}'", no + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{k}'", no + 1)));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'"))),
    }
}

fn parse_region(v: &str) -> Result<BoxRegion> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for part in v.split(',') {
        let (l, u) = part
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("region: expected lower:upper, got '{part}'")))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("region: bad number '{s}'")));
        lower.push(parse(l)?);
        upper.push(parse(u)?);
    }
    BoxRegion::new(lower, upper)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_pairs(text)?;
        let system = map.get("system").ok_or_else(|| Error::Config("missing key 'system'".into()))?.clone();
        let region = parse_region(map.get("region").ok_or_else(|| Error::Config("missing key 'region'".into()))?)?;
        let mode = match map.get("mode").map(String::as_str) {
            None | Some("cpa") => Mode::Cpa,
            Some("hybrid") => Mode::Hybrid,
            Some(other) => return Err(Error::Config(format!("mode: expected cpa or hybrid, got '{other}'"))),
        };
        let epsilon = match (mode, map.get("epsilon")) {
            (_, Some(v)) => {
                let e: f64 = v.parse().map_err(|_| Error::Config(format!("epsilon: cannot parse '{v}'")))?;
                if !(e > 0.0) {
                    return Err(Error::Config("epsilon must be positive".into()));
                }
                Some(e)
            }
            (Mode::Hybrid, None) => Some(default_epsilon(&region)),
            (Mode::Cpa, None) => None,
        };
        let divisions = match map.get("mesh.divisions") {
            None => vec![16],
            Some(v) => v
                .split(',')
                .map(|d| d.trim().parse().map_err(|_| Error::Config(format!("mesh.divisions: bad entry '{d}'"))))
                .collect::<Result<Vec<usize>>>()?,
        };
        let split = match map.get("mesh.split").map(String::as_str) {
            None | Some("radial") => KuhnSplit::Radial,
            Some("mirrored") => KuhnSplit::Mirrored,
            Some(other) => return Err(Error::Config(format!("mesh.split: expected radial or mirrored, got '{other}'"))),
        };
        let levels = num(&map, "mesh.levels", 1usize)?;
        if levels == 0 {
            return Err(Error::Config("mesh.levels must be at least 1".into()));
        }
        let timing = match map.get("timing").map(String::as_str) {
            None | Some("false") => false,
            Some("true") => true,
            Some(other) => return Err(Error::Config(format!("timing: expected true or false, got '{other}'"))),
        };
        let path = |key: &str, default: &str| PathBuf::from(map.get(key).map_or(default, String::as_str));
        Ok(Self {
            system,
            region,
            mode,
            epsilon,
            divisions,
            levels,
            split,
            segments: num(&map, "mesh.segments", 16)?,
            solver_tol: num(&map, "solver.tol", SolveOptions::default().tol)?,
            solver_max_iters: num(&map, "solver.max_iters", SolveOptions::default().max_iters)?,
            check_samples: num(&map, "check.samples", 10_000)?,
            check_tol: num(&map, "check.tol", 1e-6)?,
            seed: num(&map, "check.seed", 0)?,
            sim_inputs: num(&map, "simulate.inputs", 100)?,
            r_u: num(&map, "simulate.r_u", 0.05)?,
            horizon: num(&map, "simulate.horizon", 30.0)?,
            dt: num(&map, "simulate.dt", 1e-2)?,
            components: num(&map, "simulate.components", 5)?,
            max_freq: num(&map, "simulate.max_freq", 2.0)?,
            certificate: path("output.certificate", "certificate.json"),
            sweep: path("output.sweep", "sweep.csv"),
            check: path("output.check", "check.json"),
            simulations: path("output.simulations", "simulations.json"),
            mesh: path("output.mesh", "mesh.json"),
            timing,
            threads: num(&map, "threads", 0)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn gain_options(&self) -> GainOptions {
        GainOptions {
            solve: SolveOptions { tol: self.solver_tol, max_iters: self.solver_max_iters },
            timing: self.timing,
            ..GainOptions::default()
        }
    }

    pub fn mesh_spec(&self) -> MeshSpec {
        MeshSpec {
            region: self.region.clone(),
            divisions: self.divisions.clone(),
            boundary_segments: self.segments,
            split: self.split,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("system = linear_test\nregion = -0.8:0.8 # box\n").unwrap();
        assert_eq!(c.mode, Mode::Cpa);
        assert_eq!(c.divisions, vec![16]);
        assert_eq!(c.levels, 1);
        assert_eq!(c.epsilon, None);
        let c = RunConfig::parse("system = pendulum_k1\nregion = -0.8:0.8, -0.4:0.4\nmode = hybrid\n").unwrap();
        assert_eq!(c.epsilon, Some(0.04000000000000001));
        assert_eq!(c.region.dim(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("region = -1:1").is_err());
        assert!(RunConfig::parse("system = linear_test").is_err());
        assert!(RunConfig::parse("system = a\nregion = -1:1\nfoo = 2").is_err());
        assert!(RunConfig::parse("system = a\nsystem = b\nregion = -1:1").is_err());
        assert!(RunConfig::parse("system = a\nregion = -1:1\nmode = hybrid\nepsilon = 0").is_err());
        assert!(RunConfig::parse("system = a\nregion = -1:1\nmesh.levels = 0").is_err());
        assert!(RunConfig::parse("system = a\nregion = 1:-1").is_err());
    }
}
