//! Constraint assembly: symmetric matrices affine in the decision variables.
//!
//! Matrix constraints are stated as `M ⪯ 0`; linear constraints as `e ≥ 0`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Triangulation;
use crate::par;
use crate::system::{BoundSet, SystemModel};

/// Default lower bound standing in for `alpha > 0`.
pub const ALPHA_MIN: f64 = 1e-8;
/// Default margin standing in for `P ≻ 0`.
pub const P_DELTA: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// CPA storage on a mesh through the origin; requires `B = 0`.
    Cpa,
    /// Quadratic storage on a ball plus CPA storage on an annulus.
    Hybrid,
}

/// Maps every decision symbol to a contiguous index range:
/// `alpha`, vertex values, per-simplex `l_i` vectors, then (hybrid) the
/// lower triangle of `P` and `l_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionLayout {
    pub n: usize,
    pub num_vertices: usize,
    pub num_simplexes: usize,
    pub mode: Mode,
    v_base: usize,
    l_base: usize,
    p_base: usize,
    len: usize,
}

impl DecisionLayout {
    pub fn new(tri: &Triangulation, mode: Mode) -> Self {
        let n = tri.dim();
        let v_base = 1;
        let l_base = v_base + tri.num_vertices();
        let p_base = l_base + n * tri.num_simplexes();
        let len = match mode {
            Mode::Cpa => p_base,
            Mode::Hybrid => p_base + n * (n + 1) / 2 + 1,
        };
        Self {
            n,
            num_vertices: tri.num_vertices(),
            num_simplexes: tri.num_simplexes(),
            mode,
            v_base,
            l_base,
            p_base,
            len,
        }
    }

    pub fn alpha(&self) -> VarId {
        VarId(0)
    }

    pub fn v(&self, vertex: usize) -> VarId {
        assert!(vertex < self.num_vertices);
        VarId(self.v_base + vertex)
    }

    pub fn l(&self, simplex: usize, k: usize) -> VarId {
        assert!(simplex < self.num_simplexes && k < self.n);
        VarId(self.l_base + simplex * self.n + k)
    }

    /// Entry `(a, b)` of the symmetric `P`; both orders map to one variable.
    pub fn p(&self, a: usize, b: usize) -> VarId {
        assert!(self.mode == Mode::Hybrid && a < self.n && b < self.n);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        VarId(self.p_base + r * (r + 1) / 2 + c)
    }

    pub fn l_p(&self) -> VarId {
        assert!(self.mode == Mode::Hybrid);
        VarId(self.len - 1)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Human-readable symbol for a variable.
    pub fn describe(&self, id: VarId) -> String {
        let i = id.0;
        if i == 0 {
            "alpha".into()
        } else if i < self.l_base {
            format!("V[{}]", i - self.v_base)
        } else if i < self.p_base {
            let k = i - self.l_base;
            format!("l[{}][{}]", k / self.n, k % self.n)
        } else if self.mode == Mode::Hybrid && i < self.len - 1 {
            let mut k = i - self.p_base;
            let mut r = 0;
            while k > r {
                k -= r + 1;
                r += 1;
            }
            format!("P[{r}][{k}]")
        } else if self.mode == Mode::Hybrid && i == self.len - 1 {
            "l_p".into()
        } else {
            format!("?{i}")
        }
    }

    /// The symmetric `P` read from a solution vector.
    pub fn p_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |a, b| x[self.p(a, b).0])
    }
}

/// `constant + Σ coefficient · variable`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub constant: f64,
    #[serde(with = "term_pairs")]
    pub terms: BTreeMap<VarId, f64>,
}

// terms travel as `[[id, coefficient], ...]` so they survive tagged enums
mod term_pairs {
    use super::VarId;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(terms: &BTreeMap<VarId, f64>, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(usize, f64)> = terms.iter().map(|(k, v)| (k.0, *v)).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<VarId, f64>, D::Error> {
        let pairs = Vec::<(usize, f64)>::deserialize(d)?;
        Ok(pairs.into_iter().map(|(k, v)| (VarId(k), v)).collect())
    }
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: BTreeMap::new() }
    }

    pub fn var(id: VarId, coeff: f64) -> Self {
        let mut e = Self::default();
        e.add_term(id, coeff);
        e
    }

    pub fn add_term(&mut self, id: VarId, coeff: f64) {
        if coeff != 0.0 {
            let c = self.terms.entry(id).or_insert(0.0);
            *c += coeff;
            if *c == 0.0 {
                self.terms.remove(&id);
            }
        }
    }

    pub fn add_scaled(&mut self, other: &AffineExpr, s: f64) {
        self.constant += s * other.constant;
        for (&id, &c) in &other.terms {
            self.add_term(id, s * c);
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut e = Self::default();
        e.add_scaled(self, s);
        e
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(id, c)| c * x[id.0]).sum::<f64>()
    }

    pub fn coefficient(&self, id: VarId) -> f64 {
        self.terms.get(&id).copied().unwrap_or(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.terms.values().all(|c| c.is_finite())
    }
}

/// Symmetric matrix of affine expressions; only the lower triangle is stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMatrix {
    dim: usize,
    lower: Vec<AffineExpr>,
}

impl AffineMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, lower: vec![AffineExpr::default(); dim * (dim + 1) / 2] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn index(&self, r: usize, c: usize) -> usize {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        assert!(r < self.dim);
        r * (r + 1) / 2 + c
    }

    pub fn get(&self, r: usize, c: usize) -> &AffineExpr {
        &self.lower[self.index(r, c)]
    }

    pub fn entry_mut(&mut self, r: usize, c: usize) -> &mut AffineExpr {
        let i = self.index(r, c);
        &mut self.lower[i]
    }

    pub fn set(&mut self, r: usize, c: usize, e: AffineExpr) {
        *self.entry_mut(r, c) = e;
    }

    /// Lower-triangle entries `(row, col, expr)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &AffineExpr)> {
        (0..self.dim).flat_map(move |r| (0..=r).map(move |c| (r, c, self.get(r, c))))
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| self.get(r, c).eval(x))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { dim: self.dim, lower: self.lower.iter().map(|e| e.scaled(s)).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `expr ≥ 0`.
    Nonneg { expr: AffineExpr },
    /// `matrix ⪯ 0`.
    Nsd { matrix: AffineMatrix },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub label: String,
    #[serde(flatten)]
    pub kind: ConstraintKind,
}

impl Constraint {
    pub fn nonneg(label: impl Into<String>, expr: AffineExpr) -> Self {
        Self { label: label.into(), kind: ConstraintKind::Nonneg { expr } }
    }

    pub fn nsd(label: impl Into<String>, matrix: AffineMatrix) -> Self {
        Self { label: label.into(), kind: ConstraintKind::Nsd { matrix } }
    }

    /// Amount by which `x` violates the constraint (positive when violated).
    pub fn violation(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ConstraintKind::Nonneg { expr } => -expr.eval(x),
            ConstraintKind::Nsd { matrix } => max_eigenvalue(&matrix.eval(x)),
        }
    }
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    m.clone().symmetric_eigenvalues().max()
}

/// Scalar `½(β c + Σ_k μ_k² c²)` of the vertex error matrix; the remaining
/// diagonal block is `½ I_m` with `m = mus.len()`.
pub fn error_bound_matrix(beta: f64, mus: &[f64], c_j: f64) -> Result<(f64, usize)> {
    if !(beta >= 0.0) || !(c_j >= 0.0) || mus.iter().any(|m| !(*m >= 0.0)) {
        return Err(Error::InvalidBound(format!("beta={beta}, mus={mus:?}, c={c_j}")));
    }
    let scalar = 0.5 * (beta * c_j + mus.iter().map(|m| m * m * c_j * c_j).sum::<f64>());
    Ok((scalar, mus.len()))
}

/// `a^T ∇V` on simplex `sid`, expanded into vertex-value variables.
pub fn grad_dot(tri: &Triangulation, layout: &DecisionLayout, sid: usize, a: &[f64]) -> Result<AffineExpr> {
    let vm = tri.vertex_matrix(sid)?;
    let ids = &tri.simplexes()[sid].vertex_ids;
    let w = DVector::from_column_slice(a).transpose() * &vm.x_inv;
    let mut e = AffineExpr::default();
    for (j, &v) in ids[1..].iter().enumerate() {
        e.add_term(layout.v(v), w[j]);
        e.add_term(layout.v(ids[0]), -w[j]);
    }
    Ok(e)
}

/// `1^T l_i`.
fn l_sum(layout: &DecisionLayout, sid: usize) -> AffineExpr {
    let mut e = AffineExpr::default();
    for k in 0..layout.n {
        e.add_term(layout.l(sid, k), 1.0);
    }
    e
}

/// The vertex gain block of dimension `1 + 2m + p` for vertex `j` of simplex `sid`.
pub fn gain_lmi_block(
    model: &SystemModel,
    tri: &Triangulation,
    bounds: &BoundSet,
    sid: usize,
    j: usize,
    layout: &DecisionLayout,
) -> Result<AffineMatrix> {
    let (n, m, p) = (model.n(), model.m(), model.p());
    if layout.mode == Mode::Cpa && model.b().iter().any(|v| *v != 0.0) {
        return Err(Error::ModeMismatch("CPA storage needs B = 0; use hybrid mode".into()));
    }
    let x = tri.vertex(tri.simplexes()[sid].vertex_ids[j]);
    let c = tri.gain_shape_constant(sid, j);
    let beta = bounds.beta[sid];
    let rho = &bounds.rho[sid];
    let mu = &bounds.mu[sid];
    let lsum = l_sum(layout, sid);

    let mut mat = AffineMatrix::zeros(1 + 2 * m + p);
    let mut e11 = grad_dot(tri, layout, sid, &model.f(x))?;
    e11.add_scaled(&lsum, 0.5 * beta * c);
    e11.constant += 0.5 * rho.iter().map(|r| r * r * c * c).sum::<f64>();
    mat.set(0, 0, e11);

    let bg = model.input_matrix(x);
    for k in 0..m {
        let col: Vec<f64> = (0..n).map(|r| bg[(r, k)]).collect();
        mat.set(1 + k, 0, grad_dot(tri, layout, sid, &col)?);
        let mut d = AffineExpr::var(layout.alpha(), -2.0);
        d.constant = 0.5;
        mat.set(1 + k, 1 + k, d);
    }
    let hx = model.h(x);
    for a in 0..p {
        mat.set(1 + m + a, 0, AffineExpr::constant(hx[a]));
        mat.set(1 + m + a, 1 + m + a, AffineExpr::constant(-1.5));
    }
    for k in 0..m {
        mat.set(1 + m + p + k, 0, lsum.scaled(c * mu[k]));
        mat.set(1 + m + p + k, 1 + m + p + k, AffineExpr::constant(-2.0));
    }
    Ok(mat)
}

/// The origin-ball block of dimension `3n + m + p`.
pub fn origin_lmi_block(model: &SystemModel, epsilon: f64, bounds: &BoundSet, layout: &DecisionLayout) -> Result<AffineMatrix> {
    if layout.mode != Mode::Hybrid {
        return Err(Error::ModeMismatch("origin block needs hybrid mode".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Precondition("epsilon must be positive".into()));
    }
    let (beta, rho, mu) = match (bounds.beta_eps, bounds.rho_eps, bounds.mu_eps) {
        (Some(b), Some(r), Some(m)) => (b, r, m),
        _ => return Err(Error::Precondition("origin-ball bounds missing".into())),
    };
    let (n, m, p) = (model.n(), model.m(), model.p());
    let (nf, mf, pf) = (n as f64, m as f64, p as f64);
    let jf = model.jac_f0();
    let b = model.b();
    let pe = |a: usize, c: usize| AffineExpr::var(layout.p(a, c), 1.0);
    let lp = AffineExpr::var(layout.l_p(), 1.0);
    let mut mat = AffineMatrix::zeros(3 * n + m + p);

    // omega = P J + J^T P + (l_p eps n^1.5 beta + ½ eps² n² p rho²) I
    for r in 0..n {
        for c in 0..=r {
            let e = mat.entry_mut(r, c);
            for k in 0..n {
                e.add_scaled(&pe(r, k), jf[(k, c)]);
                e.add_scaled(&pe(k, c), jf[(k, r)]);
            }
            if r == c {
                e.add_scaled(&lp, epsilon * nf.powf(1.5) * beta);
                e.constant += 0.5 * epsilon * epsilon * nf * nf * pf * rho * rho;
            }
        }
    }
    // (P B)^T and its diagonal
    for k in 0..m {
        for r in 0..n {
            let e = mat.entry_mut(n + k, r);
            for s in 0..n {
                e.add_scaled(&pe(s, r), b[(s, k)]);
            }
        }
        let mut d = AffineExpr::var(layout.alpha(), -0.5);
        d.constant = 1.5;
        mat.set(n + k, n + k, d);
    }
    let jh = model.jac_h0();
    for a in 0..p {
        for r in 0..n {
            mat.set(n + m + a, r, AffineExpr::constant(jh[(a, r)]));
        }
        mat.set(n + m + a, n + m + a, AffineExpr::constant(-1.5));
    }
    let jg_norm: f64 = model.jac_g0().iter().map(spectral_norm).sum();
    let base4 = n + m + p;
    let base5 = base4 + n;
    for r in 0..n {
        mat.set(base4 + r, r, lp.scaled(epsilon * jg_norm));
        mat.set(base4 + r, base4 + r, AffineExpr::constant(-1.0));
        mat.set(base5 + r, r, lp.scaled(nf.powf(1.5) * mf.sqrt() * mu * epsilon * epsilon));
        mat.set(base5 + r, base5 + r, AffineExpr::constant(-2.0));
    }
    Ok(mat)
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// `±(∇V_i)_k ≤ l_i^(k)` for every coordinate `k`.
pub fn gradient_bound_constraints(sid: usize, layout: &DecisionLayout, tri: &Triangulation) -> Result<Vec<Constraint>> {
    let n = tri.dim();
    let mut out = Vec::with_capacity(2 * n);
    for k in 0..n {
        let mut unit = vec![0.0; n];
        unit[k] = 1.0;
        let g = grad_dot(tri, layout, sid, &unit)?;
        for sign in [1.0, -1.0] {
            let mut e = AffineExpr::var(layout.l(sid, k), 1.0);
            e.add_scaled(&g, -sign);
            let s = if sign > 0.0 { "+" } else { "-" };
            out.push(Constraint::nonneg(format!("grad[{sid}][{k}]{s}"), e));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiOptions {
    pub alpha_min: f64,
    pub delta: f64,
}

impl Default for LmiOptions {
    fn default() -> Self {
        Self { alpha_min: ALPHA_MIN, delta: P_DELTA }
    }
}

/// `alpha ≥ alpha_min`, `V_x ≥ 0`, and in hybrid mode `P ⪰ δI`, `P ⪯ l_p I`.
pub fn side_constraints(layout: &DecisionLayout, opts: &LmiOptions) -> Vec<Constraint> {
    let mut out = Vec::new();
    let mut a = AffineExpr::var(layout.alpha(), 1.0);
    a.constant = -opts.alpha_min;
    out.push(Constraint::nonneg("alpha_min", a));
    for v in 0..layout.num_vertices {
        out.push(Constraint::nonneg(format!("V[{v}]>=0"), AffineExpr::var(layout.v(v), 1.0)));
    }
    if layout.mode == Mode::Hybrid {
        let n = layout.n;
        if n == 1 {
            let mut e = AffineExpr::var(layout.p(0, 0), 1.0);
            e.constant = -opts.delta;
            out.push(Constraint::nonneg("P>=delta", e));
            let mut e = AffineExpr::var(layout.l_p(), 1.0);
            e.add_term(layout.p(0, 0), -1.0);
            out.push(Constraint::nonneg("P<=l_p", e));
        } else {
            let mut lower = AffineMatrix::zeros(n);
            let mut upper = AffineMatrix::zeros(n);
            for r in 0..n {
                for c in 0..=r {
                    lower.set(r, c, AffineExpr::var(layout.p(r, c), -1.0));
                    upper.set(r, c, AffineExpr::var(layout.p(r, c), 1.0));
                }
                lower.entry_mut(r, r).constant = opts.delta;
                upper.entry_mut(r, r).add_term(layout.l_p(), -1.0);
            }
            out.push(Constraint::nsd("P>=delta", lower));
            out.push(Constraint::nsd("P<=l_p", upper));
        }
    }
    out
}

/// All constraints of one gain problem, in deterministic order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiProblem {
    pub layout: DecisionLayout,
    pub constraints: Vec<Constraint>,
}

impl LmiProblem {
    /// Largest violation over all constraints at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        par::map(&self.constraints, |c| c.violation(x))
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sparse text dump, one line per nonzero coefficient:
    /// `constraint_id row col var|const coefficient`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vars {}", self.layout.len());
        let _ = writeln!(s, "# objective alpha");
        for (cid, c) in self.constraints.iter().enumerate() {
            let _ = writeln!(s, "# {cid} {}", c.label);
            let mut line = |r: usize, col: usize, e: &AffineExpr| {
                if e.constant != 0.0 {
                    let _ = writeln!(s, "{cid} {r} {col} const {:e}", e.constant);
                }
                for (id, v) in &e.terms {
                    let _ = writeln!(s, "{cid} {r} {col} {} {:e}", id.0, v);
                }
            };
            match &c.kind {
                ConstraintKind::Nonneg { expr } => line(0, 0, expr),
                ConstraintKind::Nsd { matrix } => {
                    for (r, col, e) in matrix.entries() {
                        line(r, col, e);
                    }
                }
            }
        }
        s
    }
}

/// Assembles the CPA or hybrid gain problem.
pub fn assemble(
    model: &SystemModel,
    tri: &Triangulation,
    bounds: &BoundSet,
    mode: Mode,
    epsilon: Option<f64>,
    opts: &LmiOptions,
) -> Result<LmiProblem> {
    let layout = DecisionLayout::new(tri, mode);
    if mode == Mode::Cpa && model.b().iter().any(|v| *v != 0.0) {
        return Err(Error::ModeMismatch("CPA storage needs B = 0; use hybrid mode".into()));
    }
    let mut constraints = side_constraints(&layout, opts);
    if mode == Mode::Hybrid {
        let eps = epsilon.ok_or_else(|| Error::Precondition("hybrid mode needs epsilon".into()))?;
        constraints.push(Constraint::nsd("M_eps", origin_lmi_block(model, eps, bounds, &layout)?));
    }
    let per: Vec<Result<Vec<Constraint>>> = par::map_range(tri.num_simplexes(), |sid| {
        let mut out = gradient_bound_constraints(sid, &layout, tri)?;
        let s = &tri.simplexes()[sid];
        for j in 0..=tri.dim() {
            let at_origin = tri.vertex(s.vertex_ids[j]).iter().all(|c| *c == 0.0);
            if mode == Mode::Cpa && at_origin {
                continue;
            }
            out.push(Constraint::nsd(format!("M[{sid}][{j}]"), gain_lmi_block(model, tri, bounds, sid, j, &layout)?));
        }
        Ok(out)
    });
    for r in per {
        constraints.extend(r?);
    }
    Ok(LmiProblem { layout, constraints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_annulus, build_kuhn_grid, BoxRegion};
    use crate::system::{bounds_for, linear_test, pendulum, KMode};

    #[test]
    fn error_bound_examples() {
        assert_eq!(error_bound_matrix(0.0, &[0.0], 3.0).unwrap(), (0.0, 1));
        assert_eq!(error_bound_matrix(2.0, &[], 4.0).unwrap(), (4.0, 0));
        assert_eq!(error_bound_matrix(0.0, &[1.0, 1.0], 2.0).unwrap(), (4.0, 2));
        assert!(matches!(error_bound_matrix(-1.0, &[], 1.0), Err(Error::InvalidBound(_))));
    }

    fn segment() -> Triangulation {
        Triangulation::from_parts(1, vec![vec![0.0], vec![1.0]], vec![vec![0, 1]], None).unwrap()
    }

    fn cpa_linear() -> crate::system::SystemModel {
        // x' = -x + x u, so B = 0
        let mut def = linear_test_def();
        def.b = DMatrix::zeros(1, 1);
        def.g = std::sync::Arc::new(|x: &[f64]| DMatrix::from_element(1, 1, x[0]));
        def.jac_g0 = vec![DMatrix::from_element(1, 1, 1.0)];
        crate::system::SystemModel::new(def).unwrap()
    }

    fn linear_test_def() -> crate::system::SystemDef {
        use std::sync::Arc;
        crate::system::SystemDef {
            name: "t".into(),
            n: 1,
            m: 1,
            p: 1,
            f: Arc::new(|x: &[f64]| vec![-x[0]]),
            b: DMatrix::from_element(1, 1, 1.0),
            g: Arc::new(|_: &[f64]| DMatrix::zeros(1, 1)),
            h: Arc::new(|x: &[f64]| vec![x[0]]),
            jac_f0: DMatrix::from_element(1, 1, -1.0),
            jac_h0: DMatrix::from_element(1, 1, 1.0),
            jac_g0: vec![DMatrix::zeros(1, 1)],
            beta: Arc::new(|_: &BoxRegion| 0.0),
            rho: Arc::new(|_: &BoxRegion, _| 0.0),
            mu: Arc::new(|_: &BoxRegion, _| 0.0),
            validity: None,
        }
    }

    #[test]
    fn gain_block_on_segment() {
        let model = cpa_linear();
        let tri = segment();
        let layout = DecisionLayout::new(&tri, Mode::Cpa);
        let bounds = bounds_for(&model, &tri, None).unwrap();
        let m = gain_lmi_block(&model, &tri, &bounds, 0, 1, &layout).unwrap();
        assert_eq!(m.dim(), 4);
        // ∇V = v1 - v0, f(1) = -1
        assert_eq!(m.get(0, 0).coefficient(layout.v(1)), -1.0);
        assert_eq!(m.get(0, 0).coefficient(layout.v(0)), 1.0);
        assert_eq!(m.get(0, 0).constant, 0.0);
        assert!(m.get(0, 0).coefficient(layout.l(0, 0)) == 0.0);
        // g(1) = 1
        assert_eq!(m.get(1, 0).coefficient(layout.v(1)), 1.0);
        assert_eq!(m.get(2, 0).constant, 1.0);
        assert_eq!(m.get(1, 1).coefficient(layout.alpha()), -2.0);
        assert_eq!(m.get(1, 1).constant, 0.5);
        assert_eq!(m.get(2, 2).constant, -1.5);
        assert_eq!(m.get(3, 3).constant, -2.0);
        assert_eq!(*m.get(3, 0), AffineExpr::default());
    }

    #[test]
    fn cpa_mode_rejects_constant_input() {
        let model = linear_test();
        let tri = segment();
        let layout = DecisionLayout::new(&tri, Mode::Cpa);
        let bounds = bounds_for(&model, &tri, None).unwrap();
        assert!(matches!(gain_lmi_block(&model, &tri, &bounds, 0, 1, &layout), Err(Error::ModeMismatch(_))));
        assert!(matches!(assemble(&model, &tri, &bounds, Mode::Cpa, None, &LmiOptions::default()), Err(Error::ModeMismatch(_))));
    }

    #[test]
    fn origin_vertex_has_no_error_terms() {
        let model = pendulum(KMode::X2Affine);
        let tri = build_kuhn_grid(&BoxRegion::cube(2, 0.8).unwrap(), &[4]).unwrap();
        let layout = DecisionLayout::new(&tri, Mode::Cpa);
        let bounds = bounds_for(&model, &tri, None).unwrap();
        for sid in 0..tri.num_simplexes() {
            let m = gain_lmi_block(&model, &tri, &bounds, sid, 0, &layout).unwrap();
            if tri.simplexes()[sid].contains_origin {
                for k in 0..2 {
                    assert_eq!(m.get(0, 0).coefficient(layout.l(sid, k)), 0.0);
                }
                assert_eq!(m.get(0, 0).constant, 0.0);
            }
            assert_eq!(*m.get(3, 0), AffineExpr::default());
            assert_eq!(m.dim(), 4);
        }
    }

    #[test]
    fn zero_error_block_matches_nominal_form() {
        // with zero Hessian bounds the block is the nominal HJI matrix with the
        // ½-shifted diagonals, bordered by a decoupled -2 block
        let model = cpa_linear();
        let tri = build_kuhn_grid(&BoxRegion::cube(1, 0.8).unwrap(), &[8]).unwrap();
        let layout = DecisionLayout::new(&tri, Mode::Cpa);
        let bounds = bounds_for(&model, &tri, None).unwrap();
        let x: Vec<f64> = (0..layout.len()).map(|i| (i as f64 * 0.71).sin()).collect();
        for sid in 0..tri.num_simplexes() {
            let ids = &tri.simplexes()[sid].vertex_ids;
            let (x0, x1) = (tri.vertex(ids[0])[0], tri.vertex(ids[1])[0]);
            let grad = (x[layout.v(ids[1]).0] - x[layout.v(ids[0]).0]) / (x1 - x0);
            for j in 0..2 {
                let xj = tri.vertex(ids[j])[0];
                let alpha = x[0];
                let reference = DMatrix::from_row_slice(
                    4,
                    4,
                    &[
                        grad * -xj, grad * xj, xj, 0.0,
                        grad * xj, -2.0 * alpha + 0.5, 0.0, 0.0,
                        xj, 0.0, -1.5, 0.0,
                        0.0, 0.0, 0.0, -2.0,
                    ],
                );
                let m = gain_lmi_block(&model, &tri, &bounds, sid, j, &layout).unwrap().eval(&x);
                assert!((m - reference).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn origin_block_linear_example() {
        let model = linear_test();
        let tri = build_annulus(&BoxRegion::cube(1, 0.8).unwrap(), &[16], 0.1, 8).unwrap();
        let layout = DecisionLayout::new(&tri, Mode::Hybrid);
        let bounds = bounds_for(&model, &tri, Some(0.1)).unwrap();
        let m = origin_lmi_block(&model, 0.1, &bounds, &layout).unwrap();
        assert_eq!(m.dim(), 5);
        let p = layout.p(0, 0);
        assert_eq!(m.get(0, 0).coefficient(p), -2.0);
        assert_eq!(m.get(0, 0).constant, 0.0);
        assert_eq!(m.get(1, 0).coefficient(p), 1.0);
        assert_eq!(m.get(2, 0).constant, 1.0);
        assert_eq!(*m.get(3, 0), AffineExpr::default());
        assert_eq!(*m.get(4, 0), AffineExpr::default());
        assert_eq!(m.get(3, 3).constant, -1.0);
        assert_eq!(m.get(4, 4).constant, -2.0);
        for (r, c, e) in m.entries() {
            let a = e.coefficient(layout.alpha());
            if (r, c) == (1, 1) {
                assert_eq!(a, -0.5);
                assert_eq!(e.constant, 1.5);
            } else {
                assert_eq!(a, 0.0);
            }
        }
    }

    #[test]
    fn origin_block_dimensions() {
        let model = pendulum(KMode::ConstantOne);
        let tri = build_annulus(&BoxRegion::cube(2, 0.8).unwrap(), &[8], 0.1, 16).unwrap();
        let layout = DecisionLayout::new(&tri, Mode::Hybrid);
        let bounds = bounds_for(&model, &tri, Some(0.1)).unwrap();
        let m = origin_lmi_block(&model, 0.1, &bounds, &layout).unwrap();
        assert_eq!(m.dim(), 3 * 2 + 1 + 1);
        let m = gain_lmi_block(&model, &tri, &bounds, 0, 0, &layout).unwrap();
        assert_eq!(m.dim(), 1 + 2 + 1);
    }

    #[test]
    fn gradient_constraints_on_segment() {
        let tri = segment();
        let layout = DecisionLayout::new(&tri, Mode::Cpa);
        let cs = gradient_bound_constraints(0, &layout, &tri).unwrap();
        assert_eq!(cs.len(), 2);
        let ConstraintKind::Nonneg { expr } = &cs[0].kind else { panic!() };
        assert_eq!(expr.coefficient(layout.v(1)), -1.0);
        assert_eq!(expr.coefficient(layout.l(0, 0)), 1.0);
        let ConstraintKind::Nonneg { expr } = &cs[1].kind else { panic!() };
        assert_eq!(expr.coefficient(layout.v(1)), 1.0);
        // all values zero leaves l >= 0
        let x = vec![0.0; layout.len()];
        assert!(cs.iter().all(|c| c.violation(&x) == 0.0));
    }

    #[test]
    fn side_constraint_shapes() {
        let tri = segment();
        let cpa = side_constraints(&DecisionLayout::new(&tri, Mode::Cpa), &LmiOptions::default());
        assert!(cpa.iter().all(|c| !c.label.starts_with('P')));
        assert_eq!(cpa.len(), 1 + tri.num_vertices());
        let hyb = side_constraints(&DecisionLayout::new(&tri, Mode::Hybrid), &LmiOptions::default());
        let p: Vec<_> = hyb.iter().filter(|c| c.label.starts_with('P')).collect();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|c| matches!(c.kind, ConstraintKind::Nonneg { .. })));
        assert_eq!(LmiOptions::default().alpha_min, 1e-8);
    }

    #[test]
    fn layout_is_contiguous() {
        let tri = build_annulus(&BoxRegion::cube(2, 0.8).unwrap(), &[8], 0.1, 16).unwrap();
        let layout = DecisionLayout::new(&tri, Mode::Hybrid);
        let mut ids = vec![layout.alpha().0];
        ids.extend((0..tri.num_vertices()).map(|v| layout.v(v).0));
        for s in 0..tri.num_simplexes() {
            ids.extend((0..2).map(|k| layout.l(s, k).0));
        }
        ids.extend([layout.p(0, 0).0, layout.p(1, 0).0, layout.p(1, 1).0, layout.l_p().0]);
        assert_eq!(ids, (0..layout.len()).collect::<Vec<_>>());
        assert_eq!(layout.p(0, 1), layout.p(1, 0));
        assert_eq!(layout.describe(layout.p(1, 0)), "P[1][0]");
        assert_eq!(layout.describe(layout.l_p()), "l_p");
    }

    #[test]
    fn assembly_is_deterministic_and_skips_origin() {
        let model = pendulum(KMode::X2Affine);
        let tri = build_kuhn_grid(&BoxRegion::cube(2, 0.8).unwrap(), &[4]).unwrap();
        let bounds = bounds_for(&model, &tri, None).unwrap();
        let a = assemble(&model, &tri, &bounds, Mode::Cpa, None, &LmiOptions::default()).unwrap();
        let b = assemble(&model, &tri, &bounds, Mode::Cpa, None, &LmiOptions::default()).unwrap();
        assert_eq!(a.dump(), b.dump());
        let origin = tri.simplexes().iter().filter(|s| s.contains_origin).count();
        let nsd = a.constraints.iter().filter(|c| matches!(c.kind, ConstraintKind::Nsd { .. })).count();
        assert_eq!(nsd, 3 * tri.num_simplexes() - origin);
    }
}
