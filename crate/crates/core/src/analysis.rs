//! End-to-end gain analysis: bounds, assembly, solve, certificate.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::check::{float_json, CheckReport, SimulationResult};
use crate::cpa::{CpaFunction, HybridStorage, Storage, StorageDocument};
use crate::error::{Error, Result};
use crate::geometry::{build_annulus, build_kuhn_grid_with, BoxRegion, KuhnSplit, MeshDocument, Triangulation};
use crate::lmi::{assemble, LmiOptions, LmiProblem, Mode};
use crate::sdp::{compile, default_solver, ConicSolver, SolveOptions, SolverStatus};
use crate::system::{bounds_for, SystemModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainOptions {
    pub lmi: LmiOptions,
    pub solve: SolveOptions,
    /// Largest accepted constraint violation of a returned solution.
    pub feasibility_tol: f64,
    /// Record wall-clock solve time (off keeps outputs reproducible).
    pub timing: bool,
}

impl Default for GainOptions {
    fn default() -> Self {
        Self { lmi: LmiOptions::default(), solve: SolveOptions::default(), feasibility_tol: 1e-7, timing: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshStats {
    pub num_simplexes: usize,
    pub num_vertices: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub solver: String,
    pub status: SolverStatus,
    pub iterations: u32,
    pub num_vars: usize,
    pub num_constraints: usize,
    /// Largest constraint violation of the returned point.
    pub max_violation: f64,
    #[serde(skip)]
    pub solve_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct GainCertificate {
    pub system: String,
    pub mode: Mode,
    pub region: BoxRegion,
    pub epsilon: Option<f64>,
    pub gamma_star: f64,
    pub alpha_star: f64,
    pub storage: Storage,
    pub mesh_stats: MeshStats,
    pub solver_stats: SolverStats,
    pub check_report: Option<CheckReport>,
    pub simulations: Vec<SimulationResult>,
    pub r_u: Option<f64>,
}

/// Serialized form of a certificate, mesh included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateDocument {
    pub system: String,
    pub mode: Mode,
    pub region: BoxRegion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub gamma_star: f64,
    pub alpha_star: f64,
    pub mesh_stats: MeshStats,
    pub solver_stats: SolverStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_report: Option<CheckReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub simulations: Vec<SimulationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_u: Option<f64>,
    pub mesh: MeshDocument,
    pub storage: StorageDocument,
}

impl GainCertificate {
    pub fn triangulation(&self) -> &Arc<Triangulation> {
        self.storage.cpa().triangulation()
    }

    pub fn to_document(&self) -> CertificateDocument {
        CertificateDocument {
            system: self.system.clone(),
            mode: self.mode,
            region: self.region.clone(),
            epsilon: self.epsilon,
            gamma_star: self.gamma_star,
            alpha_star: self.alpha_star,
            mesh_stats: self.mesh_stats,
            solver_stats: self.solver_stats.clone(),
            check_report: self.check_report.clone(),
            simulations: self.simulations.clone(),
            r_u: self.r_u,
            mesh: self.triangulation().to_document(),
            storage: self.storage.to_document(),
        }
    }

    pub fn from_document(doc: &CertificateDocument) -> Result<Self> {
        let tri = Arc::new(Triangulation::from_document(&doc.mesh)?);
        let storage = Storage::from_document(&doc.storage, tri)?;
        if !(doc.alpha_star > 0.0) || (doc.gamma_star - doc.alpha_star.sqrt()).abs() > 1e-12 {
            return Err(Error::Format("gamma_star must equal sqrt(alpha_star)".into()));
        }
        Ok(Self {
            system: doc.system.clone(),
            mode: doc.mode,
            region: doc.region.clone(),
            epsilon: doc.epsilon,
            gamma_star: doc.gamma_star,
            alpha_star: doc.alpha_star,
            storage,
            mesh_stats: doc.mesh_stats,
            solver_stats: doc.solver_stats.clone(),
            check_report: doc.check_report.clone(),
            simulations: doc.simulations.clone(),
            r_u: doc.r_u,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

/// Either a certificate or the reason none was found.
#[derive(Clone, Debug)]
pub enum GainOutcome {
    Certified(Box<GainCertificate>),
    NoCertificate { status: SolverStatus, max_violation: Option<f64>, diagnostics: String },
}

impl GainOutcome {
    pub fn certificate(&self) -> Option<&GainCertificate> {
        match self {
            GainOutcome::Certified(c) => Some(c),
            GainOutcome::NoCertificate { .. } => None,
        }
    }

    pub fn into_certificate(self) -> Option<GainCertificate> {
        match self {
            GainOutcome::Certified(c) => Some(*c),
            GainOutcome::NoCertificate { .. } => None,
        }
    }

    pub fn gamma_star(&self) -> f64 {
        self.certificate().map_or(f64::INFINITY, |c| c.gamma_star)
    }
}

/// Minimizes the gain bound with a pure CPA storage function (needs `B = 0`).
pub fn bound_gain_cpa(model: &SystemModel, tri: Arc<Triangulation>, opts: &GainOptions) -> Result<GainOutcome> {
    if model.b().iter().any(|v| *v != 0.0) {
        return Err(Error::ModeMismatch("CPA storage needs B = 0; use hybrid mode".into()));
    }
    let bounds = bounds_for(model, &tri, None)?;
    let problem = assemble(model, &tri, &bounds, Mode::Cpa, None, &opts.lmi)?;
    run(model, tri, problem, Mode::Cpa, None, opts, default_solver().as_ref())
}

/// Minimizes the gain bound with a quadratic piece on the ball of radius
/// `epsilon` and a CPA piece on the annulus mesh around it.
pub fn bound_gain_hybrid(
    model: &SystemModel,
    tri: Arc<Triangulation>,
    epsilon: f64,
    opts: &GainOptions,
) -> Result<GainOutcome> {
    match tri.hole_radius() {
        Some(r) if (r - epsilon).abs() <= 1e-12 * epsilon.abs().max(1.0) => {}
        other => {
            return Err(Error::Precondition(format!("mesh hole radius {other:?} does not match epsilon {epsilon}")))
        }
    }
    let bounds = bounds_for(model, &tri, Some(epsilon))?;
    let problem = assemble(model, &tri, &bounds, Mode::Hybrid, Some(epsilon), &opts.lmi)?;
    run(model, tri, problem, Mode::Hybrid, Some(epsilon), opts, default_solver().as_ref())
}

fn run(
    model: &SystemModel,
    tri: Arc<Triangulation>,
    problem: LmiProblem,
    mode: Mode,
    epsilon: Option<f64>,
    opts: &GainOptions,
    solver: &dyn ConicSolver,
) -> Result<GainOutcome> {
    let program = compile(&problem)?;
    let start = opts.timing.then(Instant::now);
    let res = solver.solve(&program, &opts.solve)?;
    let solve_seconds = start.map_or(0.0, |s| s.elapsed().as_secs_f64());
    let x = match (res.status, res.x) {
        (SolverStatus::Optimal, Some(x)) => x,
        (status, x) => {
            let max_violation = x.as_ref().map(|x| problem.max_violation(x));
            return Ok(GainOutcome::NoCertificate { status, max_violation, diagnostics: res.diagnostics });
        }
    };
    let max_violation = problem.max_violation(&x);
    if !(max_violation <= opts.feasibility_tol) {
        return Ok(GainOutcome::NoCertificate {
            status: SolverStatus::NumericalFailure,
            max_violation: Some(max_violation),
            diagnostics: format!("solution violates constraints by {max_violation:e}"),
        });
    }
    let layout = &problem.layout;
    let alpha_star = x[layout.alpha().0];
    let values: Vec<f64> = (0..tri.num_vertices()).map(|v| x[layout.v(v).0]).collect();
    let cpa = CpaFunction::new(tri.clone(), values)?;
    let storage = match (mode, epsilon) {
        (Mode::Hybrid, Some(eps)) => Storage::Hybrid(HybridStorage::new(layout.p_matrix(&x), eps, cpa)?),
        _ => Storage::Cpa(cpa),
    };
    let region = tri.bounding_box().clone();
    Ok(GainOutcome::Certified(Box::new(GainCertificate {
        system: model.name().to_string(),
        mode,
        region,
        epsilon,
        gamma_star: alpha_star.sqrt(),
        alpha_star,
        storage,
        mesh_stats: MeshStats { num_simplexes: tri.num_simplexes(), num_vertices: tri.num_vertices() },
        solver_stats: SolverStats {
            solver: solver.name().to_string(),
            status: res.status,
            iterations: res.iterations,
            num_vars: layout.len(),
            num_constraints: problem.constraints.len(),
            max_violation,
            solve_seconds,
        },
        check_report: None,
        simulations: Vec::new(),
        r_u: None,
    })))
}

/// How each sweep level's mesh is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub region: BoxRegion,
    /// Level-0 grid divisions per axis (one entry for all axes, or one per axis).
    pub divisions: Vec<usize>,
    /// Hybrid mode only: boundary segments of the annulus hole (2-D).
    pub boundary_segments: usize,
    /// CPA mode only: how grid cells are cut.
    pub split: KuhnSplit,
}

impl MeshSpec {
    pub fn level0(&self, mode: Mode, epsilon: Option<f64>) -> Result<Triangulation> {
        match mode {
            Mode::Cpa => build_kuhn_grid_with(&self.region, &self.divisions, self.split),
            Mode::Hybrid => {
                let eps = epsilon.ok_or_else(|| Error::Precondition("hybrid mode needs epsilon".into()))?;
                build_annulus(&self.region, &self.divisions, eps, self.boundary_segments)
            }
        }
    }
}

/// Default hybrid radius: a tenth of the smallest box half-width.
pub fn default_epsilon(region: &BoxRegion) -> f64 {
    0.1 * region.min_half_width()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub num_simplexes: usize,
    /// `inf` when the level yields no certificate.
    #[serde(with = "float_json")]
    pub gamma_star: f64,
    pub solve_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SweepLevel {
    pub row: SweepRow,
    pub outcome: GainOutcome,
}

/// Solves on the level-0 mesh and on `levels - 1` successive refinements.
pub fn sweep_levels(
    model: &SystemModel,
    spec: &MeshSpec,
    levels: usize,
    mode: Mode,
    epsilon: Option<f64>,
    opts: &GainOptions,
) -> Result<Vec<SweepLevel>> {
    if levels == 0 {
        return Err(Error::Config("levels must be at least 1".into()));
    }
    let mut tri = Arc::new(spec.level0(mode, epsilon)?);
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        if level > 0 {
            tri = Arc::new(tri.refine());
        }
        let start = opts.timing.then(Instant::now);
        let outcome = match mode {
            Mode::Cpa => bound_gain_cpa(model, tri.clone(), opts)?,
            Mode::Hybrid => bound_gain_hybrid(model, tri.clone(), epsilon.unwrap_or_default(), opts)?,
        };
        let solve_seconds = start.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let row = SweepRow { num_simplexes: tri.num_simplexes(), gamma_star: outcome.gamma_star(), solve_seconds };
        out.push(SweepLevel { row, outcome });
    }
    Ok(out)
}

pub fn refinement_sweep(
    model: &SystemModel,
    spec: &MeshSpec,
    levels: usize,
    mode: Mode,
    epsilon: Option<f64>,
    opts: &GainOptions,
) -> Result<Vec<SweepRow>> {
    Ok(sweep_levels(model, spec, levels, mode, epsilon, opts)?.into_iter().map(|l| l.row).collect())
}

pub const SWEEP_CSV_HEADER: &str = "num_simplexes,gamma_star,solve_seconds";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.num_simplexes, r.gamma_star, r.solve_seconds);
    }
    s
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_CSV_HEADER) {
        return Err(Error::Format("missing sweep CSV header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let bad = || Error::Format(format!("bad sweep row '{l}'"));
            if cols.len() != 3 {
                return Err(bad());
            }
            Ok(SweepRow {
                num_simplexes: cols[0].parse().map_err(|_| bad())?,
                gamma_star: cols[1].parse().map_err(|_| bad())?,
                solve_seconds: cols[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
