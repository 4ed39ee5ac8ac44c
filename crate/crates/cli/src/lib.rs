//! Subcommand implementations for the `cpa-gain` binary.

pub mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cpa_gain::analysis::{bound_gain_cpa, bound_gain_hybrid, sweep_csv, sweep_levels, GainCertificate, GainOutcome};
use cpa_gain::check::{check_hji_samples, empirical_gain_lower_bound, random_inputs, CheckReport, SimulationResult};
use cpa_gain::geometry::Triangulation;
use cpa_gain::lmi::Mode;
use cpa_gain::system::{builtin, SystemModel};
use cpa_gain::{Error, Result};

use config::RunConfig;

// stdout may be a closed pipe (`| head`); losing a progress line is fine
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cpa-gain", version, about = "Certified L2-gain bounds with CPA storage functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (flat key = value file).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for relative output paths.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Seed for sampling and random inputs (overrides `check.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (overrides `threads`; 0 uses all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for a gain certificate on the configured mesh.
    Analyze(Common),
    /// Solve on successively refined meshes and write a CSV.
    Sweep(Common),
    /// Sample the HJI and simulate random inputs against a certificate.
    Check {
        #[command(flatten)]
        common: Common,
        /// Certificate to check (defaults to the configured output path).
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Simulate seeded random inputs and report L2 ratios.
    Simulate(Common),
    /// Write the configured mesh as JSON.
    ExportMesh(Common),
}

pub fn run(cli: Cli) -> i32 {
    let res = match cli.command {
        Command::Analyze(c) => with_config(&c).and_then(|cfg| analyze(&c, &cfg)),
        Command::Sweep(c) => with_config(&c).and_then(|cfg| sweep(&c, &cfg)),
        Command::Check { common, certificate } => check(&common, certificate.as_deref()),
        Command::Simulate(c) => with_config(&c).and_then(|cfg| simulate(&c, &cfg)),
        Command::ExportMesh(c) => with_config(&c).and_then(|cfg| export_mesh(&c, &cfg)),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn with_config(c: &Common) -> Result<RunConfig> {
    let path = c.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    apply_overrides(c, &mut cfg);
    Ok(cfg)
}

fn apply_overrides(c: &Common, cfg: &mut RunConfig) {
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    if cfg.threads > 0 {
        // the pool can only be set once per process; later calls keep the first
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
}

fn output_path(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

fn write_output(out: &Path, p: &Path, contents: &str) -> Result<PathBuf> {
    let path = output_path(out, p);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn model_for(cfg: &RunConfig) -> Result<SystemModel> {
    let model = builtin(&cfg.system)?;
    if model.n() != cfg.region.dim() {
        return Err(Error::Config(format!(
            "region has {} coordinates but system '{}' has {} states",
            cfg.region.dim(),
            cfg.system,
            model.n()
        )));
    }
    if cfg.mode == Mode::Cpa && model.b().iter().any(|v| *v != 0.0) {
        return Err(Error::Config(format!("system '{}' has B != 0; set mode = hybrid", cfg.system)));
    }
    Ok(model)
}

fn build_mesh(cfg: &RunConfig) -> Result<Triangulation> {
    let mut tri = cfg.mesh_spec().level0(cfg.mode, cfg.epsilon)?;
    for _ in 1..cfg.levels {
        tri = tri.refine();
    }
    Ok(tri)
}

fn analyze(c: &Common, cfg: &RunConfig) -> Result<i32> {
    let model = model_for(cfg)?;
    let tri = Arc::new(build_mesh(cfg)?);
    let opts = cfg.gain_options();
    let start = Instant::now();
    let outcome = match cfg.mode {
        Mode::Cpa => bound_gain_cpa(&model, tri.clone(), &opts)?,
        Mode::Hybrid => bound_gain_hybrid(&model, tri.clone(), cfg.epsilon.unwrap_or_default(), &opts)?,
    };
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        GainOutcome::Certified(mut cert) => {
            cert.r_u = Some(cfg.r_u);
            let path = write_output(&c.out, &cfg.certificate, &cert.to_json()?)?;
            say!("gamma* = {}", cert.gamma_star);
            say!("simplexes = {}, vertices = {}", cert.mesh_stats.num_simplexes, cert.mesh_stats.num_vertices);
            say!("solve time = {secs:.3}s");
            say!("certificate written to {}", path.display());
            Ok(EXIT_OK)
        }
        GainOutcome::NoCertificate { status, diagnostics, .. } => {
            say!("no certificate at this mesh/region ({status:?}): {diagnostics}");
            say!("simplexes = {}", tri.num_simplexes());
            Ok(EXIT_INFEASIBLE)
        }
    }
}

fn sweep(c: &Common, cfg: &RunConfig) -> Result<i32> {
    let model = model_for(cfg)?;
    let levels = sweep_levels(&model, &cfg.mesh_spec(), cfg.levels, cfg.mode, cfg.epsilon, &cfg.gain_options())?;
    let rows: Vec<_> = levels.iter().map(|l| l.row).collect();
    let path = write_output(&c.out, &cfg.sweep, &sweep_csv(&rows))?;
    for r in &rows {
        say!("{:>8} simplexes  gamma* = {}", r.num_simplexes, r.gamma_star);
    }
    say!("sweep written to {}", path.display());
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichSummary {
    pub runs: usize,
    pub in_region: usize,
    pub max_ratio: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutput {
    pub system: String,
    pub gamma_star: f64,
    pub seed: u64,
    pub hji: CheckReport,
    pub simulation: SandwichSummary,
    pub passed: bool,
}

fn sandwich(model: &SystemModel, cfg: &RunConfig, gamma: f64) -> Result<(SandwichSummary, Vec<SimulationResult>)> {
    let inputs = random_inputs(cfg.sim_inputs, model.m(), cfg.r_u, cfg.components, cfg.max_freq, cfg.seed);
    let sims = empirical_gain_lower_bound(model, &inputs, cfg.horizon, cfg.dt, &cfg.region)?;
    let kept: Vec<f64> = sims.iter().filter(|s| s.state_stayed_in_region).map(|s| s.l2_ratio).collect();
    let max_ratio = kept.iter().copied().fold(0.0, f64::max);
    let summary = SandwichSummary { runs: sims.len(), in_region: kept.len(), max_ratio, passed: max_ratio <= gamma };
    Ok((summary, sims))
}

fn check(c: &Common, certificate: Option<&Path>) -> Result<i32> {
    let cfg = match &c.config {
        Some(_) => Some(with_config(c)?),
        None => None,
    };
    let default_cert = cfg.as_ref().map_or_else(|| PathBuf::from("certificate.json"), |cfg| cfg.certificate.clone());
    let cert_path = certificate.map_or_else(|| output_path(&c.out, &default_cert), Path::to_path_buf);
    let text = std::fs::read_to_string(&cert_path)?;
    let cert = GainCertificate::from_json(&text)?;
    let mut cfg = match cfg {
        Some(cfg) => cfg,
        None => {
            let text = format!("system = {}\nregion = {}\n", cert.system, region_text(&cert.region));
            let mut cfg = RunConfig::parse(&text)?;
            apply_overrides(c, &mut cfg);
            cfg
        }
    };
    if cfg.system != cert.system {
        cfg.system = cert.system.clone();
    }
    let model = builtin(&cert.system)?;
    let hji = check_hji_samples(&model, &cert.storage, cert.gamma_star, &cfg.region, cfg.check_samples, cfg.check_tol, cfg.seed);
    let (simulation, _) = sandwich(&model, &cfg, cert.gamma_star)?;
    let passed = hji.passed && simulation.passed;
    let report = CheckOutput { system: cert.system.clone(), gamma_star: cert.gamma_star, seed: cfg.seed, hji, simulation, passed };
    let path = write_output(&c.out, &cfg.check, &serde_json::to_string_pretty(&report)?)?;
    say!(
        "max sampled eigenvalue = {:e} over {} samples ({} skipped)",
        report.hji.max_violation, report.hji.num_samples, report.hji.skipped
    );
    say!(
        "max simulated ratio = {} over {} in-region runs, gamma* = {}",
        report.simulation.max_ratio, report.simulation.in_region, report.gamma_star
    );
    say!("{} ({})", if passed { "check passed" } else { "check FAILED" }, path.display());
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn region_text(r: &cpa_gain::geometry::BoxRegion) -> String {
    r.lower.iter().zip(&r.upper).map(|(l, u)| format!("{l}:{u}")).collect::<Vec<_>>().join(",")
}

fn simulate(c: &Common, cfg: &RunConfig) -> Result<i32> {
    let model = builtin(&cfg.system)?;
    let (summary, sims) = sandwich(&model, cfg, f64::INFINITY)?;
    let path = write_output(&c.out, &cfg.simulations, &serde_json::to_string_pretty(&sims)?)?;
    say!("max in-region ratio = {} over {} of {} runs", summary.max_ratio, summary.in_region, summary.runs);
    say!("simulations written to {}", path.display());
    Ok(EXIT_OK)
}

fn export_mesh(c: &Common, cfg: &RunConfig) -> Result<i32> {
    let tri = build_mesh(cfg)?;
    let path = write_output(&c.out, &cfg.mesh, &serde_json::to_string_pretty(&tri.to_document())?)?;
    say!("{} simplexes, {} vertices written to {}", tri.num_simplexes(), tri.num_vertices(), path.display());
    Ok(EXIT_OK)
}
