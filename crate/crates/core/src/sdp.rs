//! Standard-form conic programs and solver adapters.
//!
//! A [`ConicProgram`] minimizes a linear objective subject to affine rows
//! lying in a nonnegative cone and in PSD cones. PSD cones hold the scaled
//! lower triangle (row-major, off-diagonals times `sqrt 2`), which is the same
//! ordering as the column-major upper triangle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{AffineExpr, ConstraintKind, LmiProblem, VarId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Cone {
    Nonnegative { rows: Vec<AffineExpr> },
    Psd { dim: usize, entries: Vec<AffineExpr> },
}

impl Cone {
    pub fn num_rows(&self) -> usize {
        match self {
            Cone::Nonnegative { rows } => rows.len(),
            Cone::Psd { entries, .. } => entries.len(),
        }
    }
}

/// `min c^T x` subject to every cone row expression lying in its cone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub objective: Vec<(VarId, f64)>,
    pub cones: Vec<Cone>,
}

/// Packs a symmetric matrix given by a lower-triangle accessor into svec form.
pub fn svec(dim: usize, get: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
    for r in 0..dim {
        for c in 0..=r {
            let s = if r == c { 1.0 } else { std::f64::consts::SQRT_2 };
            out.push(s * get(r, c));
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(dim: usize, v: &[f64]) -> nalgebra::DMatrix<f64> {
    let mut m = nalgebra::DMatrix::zeros(dim, dim);
    let mut k = 0;
    for r in 0..dim {
        for c in 0..=r {
            let val = if r == c { v[k] } else { v[k] / std::f64::consts::SQRT_2 };
            m[(r, c)] = val;
            m[(c, r)] = val;
            k += 1;
        }
    }
    m
}

/// Compiles an assembled problem with objective `min alpha`.
pub fn compile(problem: &LmiProblem) -> Result<ConicProgram> {
    let alpha = problem.layout.alpha();
    compile_constraints(&problem.constraints, problem.layout.len(), &[(alpha, 1.0)])
}

/// Compiles constraints: all linear rows go into one leading nonnegative
/// cone, and each `M ⪯ 0` becomes `-M` in a PSD cone, in input order.
pub fn compile_constraints(
    constraints: &[crate::lmi::Constraint],
    num_vars: usize,
    objective: &[(VarId, f64)],
) -> Result<ConicProgram> {
    let check = |e: &AffineExpr| -> Result<()> {
        if let Some((id, _)) = e.terms.iter().find(|(id, _)| id.0 >= num_vars) {
            return Err(Error::Compile(format!("variable {} outside layout of {num_vars}", id.0)));
        }
        if !e.is_finite() {
            return Err(Error::Compile("non-finite coefficient".into()));
        }
        Ok(())
    };
    for (id, c) in objective {
        if id.0 >= num_vars || !c.is_finite() {
            return Err(Error::Compile("invalid objective".into()));
        }
    }
    let mut rows = Vec::new();
    let mut psd = Vec::new();
    for c in constraints {
        match &c.kind {
            ConstraintKind::Nonneg { expr } => {
                check(expr)?;
                rows.push(expr.clone());
            }
            ConstraintKind::Nsd { matrix } => {
                let dim = matrix.dim();
                let mut entries = Vec::with_capacity(dim * (dim + 1) / 2);
                for (r, col, e) in matrix.entries() {
                    check(e)?;
                    let s = if r == col { -1.0 } else { -std::f64::consts::SQRT_2 };
                    entries.push(e.scaled(s));
                }
                psd.push(Cone::Psd { dim, entries });
            }
        }
    }
    let mut cones = Vec::with_capacity(psd.len() + 1);
    if !rows.is_empty() {
        cones.push(Cone::Nonnegative { rows });
    }
    cones.extend(psd);
    Ok(ConicProgram { num_vars, objective: objective.to_vec(), cones })
}

impl ConicProgram {
    /// Largest cone violation at `x`: `-min row` for the nonnegative cone,
    /// `-lambda_min` for PSD cones.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.cones
            .iter()
            .map(|c| cone_violation(c, x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|(id, c)| c * x[id.0]).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn cone_violation(c: &Cone, x: &[f64]) -> f64 {
    match c {
        Cone::Nonnegative { rows } => rows.iter().map(|r| -r.eval(x)).fold(f64::NEG_INFINITY, f64::max),
        Cone::Psd { dim, entries } => {
            let v: Vec<f64> = entries.iter().map(|e| e.eval(x)).collect();
            -smat(*dim, &v).symmetric_eigenvalues().min()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub status: SolverStatus,
    /// Primal values, present for `Optimal` and `MaxIters`.
    pub x: Option<Vec<f64>>,
    pub objective: f64,
    pub iterations: u32,
    #[serde(skip)]
    pub solve_seconds: f64,
    pub diagnostics: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iters: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 200_000 }
    }
}

/// Narrow adapter contract: linear objective, nonnegative and PSD cones.
pub trait ConicSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConicProgram, opts: &SolveOptions) -> Result<SolverResult>;
}

/// The production adapter when available, otherwise the reference solver.
pub fn default_solver() -> Box<dyn ConicSolver> {
    #[cfg(feature = "clarabel")]
    {
        Box::new(ClarabelSolver)
    }
    #[cfg(not(feature = "clarabel"))]
    {
        Box::new(ReferenceSolver::default())
    }
}

/// Solves with the default adapter.
pub fn solve(program: &ConicProgram, opts: &SolveOptions) -> Result<SolverResult> {
    default_solver().solve(program, opts)
}

fn unconstrained(program: &ConicProgram) -> Option<SolverResult> {
    if !program.cones.is_empty() {
        return None;
    }
    let bounded = program.objective.iter().all(|(_, c)| *c == 0.0);
    Some(SolverResult {
        status: if bounded { SolverStatus::Optimal } else { SolverStatus::Unbounded },
        x: bounded.then(|| vec![0.0; program.num_vars]),
        objective: if bounded { 0.0 } else { f64::NEG_INFINITY },
        iterations: 0,
        solve_seconds: 0.0,
        diagnostics: "no constraints".into(),
    })
}

#[cfg(feature = "clarabel")]
pub use clarabel_adapter::ClarabelSolver;

#[cfg(feature = "clarabel")]
mod clarabel_adapter {
    use super::*;
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus as CStatus,
        SupportedConeT,
    };

    /// Interior-point adapter backed by Clarabel.
    #[derive(Clone, Copy, Debug, Default)]
    pub struct ClarabelSolver;

    impl ConicSolver for ClarabelSolver {
        fn name(&self) -> &'static str {
            "clarabel"
        }

        fn solve(&self, program: &ConicProgram, opts: &SolveOptions) -> Result<SolverResult> {
            if let Some(r) = unconstrained(program) {
                return Ok(r);
            }
            let n = program.num_vars;
            let mut q = vec![0.0; n];
            for (id, c) in &program.objective {
                q[id.0] += c;
            }
            // s = b - A x with s = expr(x) = const + a.x, so b = const and A = -a
            let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            let mut b = Vec::new();
            let mut cones = Vec::with_capacity(program.cones.len());
            let mut push_row = |e: &AffineExpr, b: &mut Vec<f64>| {
                let row = b.len();
                b.push(e.constant);
                for (id, c) in &e.terms {
                    columns[id.0].push((row, -c));
                }
            };
            for cone in &program.cones {
                match cone {
                    Cone::Nonnegative { rows } => {
                        rows.iter().for_each(|r| push_row(r, &mut b));
                        cones.push(NonnegativeConeT(rows.len()));
                    }
                    Cone::Psd { dim, entries } => {
                        entries.iter().for_each(|r| push_row(r, &mut b));
                        cones.push(if *dim == 1 { NonnegativeConeT(1) } else { PSDTriangleConeT(*dim) });
                    }
                }
            }
            let m = b.len();
            let mut colptr = Vec::with_capacity(n + 1);
            let mut rowval = Vec::new();
            let mut nzval = Vec::new();
            colptr.push(0);
            for col in &columns {
                for &(r, v) in col {
                    rowval.push(r);
                    nzval.push(v);
                }
                colptr.push(rowval.len());
            }
            let a = CscMatrix::new(m, n, colptr, rowval, nzval);
            let p = CscMatrix::new(n, n, vec![0; n + 1], vec![], vec![]);

            let mut settings = DefaultSettings::<f64>::default();
            settings.verbose = false;
            settings.max_iter = opts.max_iters;
            settings.tol_gap_abs = opts.tol;
            settings.tol_gap_rel = opts.tol;
            settings.tol_feas = opts.tol;
            settings.presolve_enable = false;

            let cones: Vec<SupportedConeT<f64>> = cones;
            let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
                .map_err(|e| Error::Solver(format!("clarabel setup failed: {e}")))?;
            solver.solve();
            let sol = &solver.solution;
            let status = match sol.status {
                CStatus::Solved | CStatus::AlmostSolved => SolverStatus::Optimal,
                CStatus::PrimalInfeasible | CStatus::AlmostPrimalInfeasible => SolverStatus::Infeasible,
                CStatus::DualInfeasible | CStatus::AlmostDualInfeasible => SolverStatus::Unbounded,
                CStatus::MaxIterations | CStatus::MaxTime => SolverStatus::MaxIters,
                _ => SolverStatus::NumericalFailure,
            };
            let has_x = matches!(status, SolverStatus::Optimal | SolverStatus::MaxIters);
            Ok(SolverResult {
                status,
                x: has_x.then(|| sol.x.clone()),
                objective: sol.obj_val,
                iterations: sol.iterations,
                solve_seconds: sol.solve_time,
                diagnostics: format!("clarabel status {:?}", sol.status),
            })
        }
    }
}

/// Penalty subgradient method for very small programs (a few variables,
/// cones of dimension one or two). Slow and approximate; intended for
/// cross-checking the production adapter.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceSolver {
    pub iterations: u32,
    pub penalty: f64,
    pub initial_step: f64,
    pub final_step: f64,
    pub bound: f64,
}

impl Default for ReferenceSolver {
    fn default() -> Self {
        Self { iterations: 40_000, penalty: 10.0, initial_step: 0.5, final_step: 1e-8, bound: 1e6 }
    }
}

impl ConicSolver for ReferenceSolver {
    fn name(&self) -> &'static str {
        "reference"
    }

    fn solve(&self, program: &ConicProgram, _opts: &SolveOptions) -> Result<SolverResult> {
        if let Some(r) = unconstrained(program) {
            return Ok(r);
        }
        if program.num_vars > 64 {
            return Err(Error::Solver("reference solver handles tiny programs only".into()));
        }
        let n = program.num_vars;
        let mut x = vec![0.0; n];
        let ratio = (self.final_step / self.initial_step).powf(1.0 / self.iterations as f64);
        let mut step = self.initial_step;
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut least_violation = f64::INFINITY;
        for it in 0..self.iterations {
            let mut grad = vec![0.0; n];
            for (id, c) in &program.objective {
                grad[id.0] += c;
            }
            let mut worst = 0.0f64;
            for cone in &program.cones {
                match cone {
                    Cone::Nonnegative { rows } => {
                        for r in rows {
                            let v = -r.eval(&x);
                            if v > 0.0 {
                                worst = worst.max(v);
                                for (id, c) in &r.terms {
                                    grad[id.0] -= self.penalty * c;
                                }
                            }
                        }
                    }
                    Cone::Psd { dim, entries } => {
                        let vals: Vec<f64> = entries.iter().map(|e| e.eval(&x)).collect();
                        let eig = smat(*dim, &vals).symmetric_eigen();
                        let (k, lmin) = eig
                            .eigenvalues
                            .iter()
                            .enumerate()
                            .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
                        if lmin < 0.0 {
                            worst = worst.max(-lmin);
                            // d(lambda_min)/d(svec entries) = svec(v v^T)
                            let v = eig.eigenvectors.column(k);
                            let w = svec(*dim, |r, c| v[r] * v[c]);
                            for (e, wk) in entries.iter().zip(&w) {
                                for (id, c) in &e.terms {
                                    grad[id.0] -= self.penalty * c * wk;
                                }
                            }
                        }
                    }
                }
            }
            let obj = program.objective_value(&x);
            least_violation = least_violation.min(worst);
            if worst <= 1e-7 && best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, x.clone()));
            }
            for i in 0..n {
                x[i] -= step * grad[i];
            }
            if x.iter().any(|v| v.abs() > self.bound) {
                return Ok(SolverResult {
                    status: SolverStatus::Unbounded,
                    x: None,
                    objective: f64::NEG_INFINITY,
                    iterations: it + 1,
                    solve_seconds: 0.0,
                    diagnostics: "iterate diverged".into(),
                });
            }
            step *= ratio;
        }
        Ok(match best {
            Some((obj, x)) => SolverResult {
                status: SolverStatus::Optimal,
                x: Some(x),
                objective: obj,
                iterations: self.iterations,
                solve_seconds: 0.0,
                diagnostics: "penalty subgradient".into(),
            },
            None => SolverResult {
                status: SolverStatus::Infeasible,
                x: None,
                objective: f64::INFINITY,
                iterations: self.iterations,
                solve_seconds: 0.0,
                diagnostics: format!("least violation {least_violation:e}"),
            },
        })
    }
}
