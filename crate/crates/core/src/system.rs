//! Input-affine systems `x' = f(x) + (B + g(x)) u`, `y = h(x)` and their
//! second-derivative bound oracles.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxRegion, Triangulation};
use crate::interval;
use crate::par;

pub type VecFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type MatFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type BoxOracle = Arc<dyn Fn(&BoxRegion) -> f64 + Send + Sync>;
pub type IndexedOracle = Arc<dyn Fn(&BoxRegion, usize) -> f64 + Send + Sync>;

/// Tolerance on `f(0)`, `g(0)`, `h(0)`.
pub const ORIGIN_TOL: f64 = 1e-12;

/// Raw ingredients of a [`SystemModel`].
#[derive(Clone)]
pub struct SystemDef {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub f: VecFn,
    pub b: DMatrix<f64>,
    /// `n x m`, vanishing at the origin.
    pub g: MatFn,
    pub h: VecFn,
    pub jac_f0: DMatrix<f64>,
    pub jac_h0: DMatrix<f64>,
    /// Jacobians of the columns of `g` at the origin, one per input.
    pub jac_g0: Vec<DMatrix<f64>>,
    /// Bound on `|d^2 f_p / dx_q dx_r|` over a box, all `p, q, r`.
    pub beta: BoxOracle,
    /// Bound on `|d^2 h_a / dx_q dx_r|` over a box for output `a`.
    pub rho: IndexedOracle,
    /// Bound on `|d^2 g_{pk} / dx_q dx_r|` over a box for input column `k`.
    pub mu: IndexedOracle,
    /// Region on which the dynamics and oracles are valid; `None` for everywhere.
    pub validity: Option<BoxRegion>,
}

/// An immutable, validated input-affine system.
#[derive(Clone)]
pub struct SystemModel {
    def: SystemDef,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.def.name)
            .field("n", &self.def.n)
            .field("m", &self.def.m)
            .field("p", &self.def.p)
            .finish_non_exhaustive()
    }
}

impl SystemModel {
    /// Validates shapes, the origin conditions and the Jacobians at the origin.
    pub fn new(def: SystemDef) -> Result<Self> {
        let (n, m, p) = (def.n, def.m, def.p);
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::Precondition("dimensions must be positive".into()));
        }
        let shape = |name: &str, mat: &DMatrix<f64>, r: usize, c: usize| {
            if mat.nrows() != r || mat.ncols() != c {
                Err(Error::Precondition(format!("{name} must be {r}x{c}")))
            } else {
                Ok(())
            }
        };
        shape("B", &def.b, n, m)?;
        shape("jac_f0", &def.jac_f0, n, n)?;
        shape("jac_h0", &def.jac_h0, p, n)?;
        if def.jac_g0.len() != m {
            return Err(Error::Precondition("one g-column Jacobian per input expected".into()));
        }
        for (k, j) in def.jac_g0.iter().enumerate() {
            shape(&format!("jac_g0[{k}]"), j, n, n)?;
        }
        let zero = vec![0.0; n];
        let f0 = (def.f)(&zero);
        let g0 = (def.g)(&zero);
        let h0 = (def.h)(&zero);
        if f0.len() != n || h0.len() != p || g0.nrows() != n || g0.ncols() != m {
            return Err(Error::Precondition("f, g or h returns the wrong shape".into()));
        }
        if f0.iter().any(|v| v.abs() > ORIGIN_TOL)
            || g0.iter().any(|v| v.abs() > ORIGIN_TOL)
            || h0.iter().any(|v| v.abs() > ORIGIN_TOL)
        {
            return Err(Error::Precondition("f, g and h must vanish at the origin".into()));
        }
        let model = Self { def };
        let checks = [
            ("jac_f0", model.def.jac_f0.clone(), fd_jacobian(&*model.def.f, &zero)),
            ("jac_h0", model.def.jac_h0.clone(), fd_jacobian(&*model.def.h, &zero)),
        ];
        for (name, given, fd) in checks {
            if !jacobian_close(&given, &fd) {
                return Err(Error::Precondition(format!("{name} disagrees with finite differences")));
            }
        }
        for k in 0..m {
            let g = model.def.g.clone();
            let col = move |x: &[f64]| g(x).column(k).iter().copied().collect::<Vec<f64>>();
            if !jacobian_close(&model.def.jac_g0[k], &fd_jacobian(&col, &zero)) {
                return Err(Error::Precondition(format!("jac_g0[{k}] disagrees with finite differences")));
            }
        }
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }
    pub fn n(&self) -> usize {
        self.def.n
    }
    pub fn m(&self) -> usize {
        self.def.m
    }
    pub fn p(&self) -> usize {
        self.def.p
    }
    pub fn f(&self, x: &[f64]) -> Vec<f64> {
        (self.def.f)(x)
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.def.b
    }
    pub fn g(&self, x: &[f64]) -> DMatrix<f64> {
        (self.def.g)(x)
    }
    /// The full input matrix `B + g(x)`.
    pub fn input_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        &self.def.b + self.g(x)
    }
    pub fn h(&self, x: &[f64]) -> Vec<f64> {
        (self.def.h)(x)
    }
    pub fn jac_f0(&self) -> &DMatrix<f64> {
        &self.def.jac_f0
    }
    pub fn jac_h0(&self) -> &DMatrix<f64> {
        &self.def.jac_h0
    }
    pub fn jac_g0(&self) -> &[DMatrix<f64>] {
        &self.def.jac_g0
    }
    pub fn beta(&self, region: &BoxRegion) -> f64 {
        (self.def.beta)(region)
    }
    pub fn rho(&self, region: &BoxRegion, a: usize) -> f64 {
        (self.def.rho)(region, a)
    }
    pub fn mu(&self, region: &BoxRegion, k: usize) -> f64 {
        (self.def.mu)(region, k)
    }
    pub fn validity(&self) -> Option<&BoxRegion> {
        self.def.validity.as_ref()
    }

    /// `x' = f(x) + (B + g(x)) u`.
    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dx = self.f(x);
        let bg = self.input_matrix(x);
        for i in 0..self.n() {
            for k in 0..self.m() {
                dx[i] += bg[(i, k)] * u[k];
            }
        }
        dx
    }
}

/// Gain-factor variant of the pendulum input channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMode {
    /// `k(x) = 1`: constant input matrix, `g = 0`.
    ConstantOne,
    /// `k(x) = x2`: `B = 0`, `g(x) = [0; x2]`.
    X2Affine,
}

/// Damped pendulum `x1' = x2`, `x2' = -sin x1 - x2 + k(x) u`, `y = x2`.
pub fn pendulum(k_mode: KMode) -> SystemModel {
    let (name, b, g, jac_g0): (&str, _, MatFn, _) = match k_mode {
        KMode::ConstantOne => (
            "pendulum_k1",
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            Arc::new(|_: &[f64]| DMatrix::zeros(2, 1)),
            DMatrix::zeros(2, 2),
        ),
        KMode::X2Affine => (
            "pendulum_kx2",
            DMatrix::zeros(2, 1),
            Arc::new(|x: &[f64]| DMatrix::from_column_slice(2, 1, &[0.0, x[1]])),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        ),
    };
    SystemModel::new(SystemDef {
        name: name.into(),
        n: 2,
        m: 1,
        p: 1,
        f: Arc::new(|x: &[f64]| vec![x[1], -x[0].sin() - x[1]]),
        b,
        g,
        h: Arc::new(|x: &[f64]| vec![x[1]]),
        jac_f0: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]),
        jac_h0: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        jac_g0: vec![jac_g0],
        beta: Arc::new(|r: &BoxRegion| interval::abs_sin_max(r.lower[0], r.upper[0])),
        rho: Arc::new(|_: &BoxRegion, _| 0.0),
        mu: Arc::new(|_: &BoxRegion, _| 0.0),
        validity: None,
    })
    .expect("pendulum model is well formed")
}

/// Scalar system `x' = -x + u`, `y = x`, with L2 gain exactly one.
pub fn linear_test() -> SystemModel {
    SystemModel::new(SystemDef {
        name: "linear_test".into(),
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
    })
    .expect("linear test model is well formed")
}

/// Looks up a shipped model by name.
pub fn builtin(name: &str) -> Result<SystemModel> {
    match name {
        "pendulum_k1" | "pendulum" | "pendulum_constant_one" => Ok(pendulum(KMode::ConstantOne)),
        "pendulum_kx2" | "pendulum_x2_affine" => Ok(pendulum(KMode::X2Affine)),
        "linear_test" | "linear" => Ok(linear_test()),
        other => Err(Error::Config(format!("unknown system '{other}'"))),
    }
}

/// Per-simplex and origin-ball second-derivative bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    pub beta: Vec<f64>,
    /// `rho[i][a]` for output `a`.
    pub rho: Vec<Vec<f64>>,
    /// `mu[i][k]` for input column `k`.
    pub mu: Vec<Vec<f64>>,
    pub beta_eps: Option<f64>,
    pub rho_eps: Option<f64>,
    pub mu_eps: Option<f64>,
}

fn checked(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidOracle(format!("{what} returned {v}")))
    }
}

/// Calls the oracles on every simplex bounding box, and on `[-eps, eps]^n`
/// when `hybrid` is set.
pub fn bounds_for(model: &SystemModel, tri: &Triangulation, hybrid: Option<f64>) -> Result<BoundSet> {
    if tri.dim() != model.n() {
        return Err(Error::Precondition("triangulation and model dimensions differ".into()));
    }
    if let Some(valid) = model.validity() {
        if !tri.vertices().iter().all(|v| valid.contains(&v.coords, 1e-12)) {
            return Err(Error::Precondition("mesh leaves the model's validity region".into()));
        }
    }
    let per: Vec<Result<(f64, Vec<f64>, Vec<f64>)>> = par::map_range(tri.num_simplexes(), |sid| {
        let bb = tri.simplex_bbox(sid);
        let beta = checked(model.beta(bb), "beta oracle")?;
        let rho = (0..model.p()).map(|a| checked(model.rho(bb, a), "rho oracle")).collect::<Result<_>>()?;
        let mu = (0..model.m()).map(|k| checked(model.mu(bb, k), "mu oracle")).collect::<Result<_>>()?;
        Ok((beta, rho, mu))
    });
    let mut set = BoundSet {
        beta: Vec::with_capacity(per.len()),
        rho: Vec::with_capacity(per.len()),
        mu: Vec::with_capacity(per.len()),
        beta_eps: None,
        rho_eps: None,
        mu_eps: None,
    };
    for r in per {
        let (b, r, m) = r?;
        set.beta.push(b);
        set.rho.push(r);
        set.mu.push(m);
    }
    if let Some(eps) = hybrid {
        let ball = BoxRegion::cube(model.n(), eps)?;
        set.beta_eps = Some(checked(model.beta(&ball), "beta oracle")?);
        let mut rho = 0.0f64;
        for a in 0..model.p() {
            rho = rho.max(checked(model.rho(&ball, a), "rho oracle")?);
        }
        let mut mu = 0.0f64;
        for k in 0..model.m() {
            mu = mu.max(checked(model.mu(&ball, k), "mu oracle")?);
        }
        set.rho_eps = Some(rho);
        set.mu_eps = Some(mu);
    }
    Ok(set)
}

/// Central-difference Jacobian of `f` at `x` (step `1e-6`).
pub fn fd_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> DMatrix<f64> {
    let h = 1e-6;
    let rows = f(x).len();
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut xp = x.to_vec();
    for q in 0..x.len() {
        xp[q] = x[q] + h;
        let fp = f(&xp);
        xp[q] = x[q] - h;
        let fm = f(&xp);
        xp[q] = x[q];
        for r in 0..rows {
            jac[(r, q)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

fn jacobian_close(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-6 * (1.0 + x.abs()))
}

/// Central-difference estimate of the largest `|d^2 phi_r / dx_q dx_s|` over
/// all components `r` of `phi` at `x`.
pub fn fd_max_second_partial(phi: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], step: f64) -> f64 {
    let n = x.len();
    let mut best = 0.0f64;
    let mut y = x.to_vec();
    let mut eval = |dq: f64, q: usize, ds: f64, s: usize| {
        y.copy_from_slice(x);
        y[q] += dq;
        y[s] += ds;
        phi(&y)
    };
    for q in 0..n {
        for s in q..n {
            let pp = eval(step, q, step, s);
            let pm = eval(step, q, -step, s);
            let mp = eval(-step, q, step, s);
            let mm = eval(-step, q, -step, s);
            for r in 0..pp.len() {
                let d = (pp[r] - pm[r] - mp[r] + mm[r]) / (4.0 * step * step);
                best = best.max(d.abs());
            }
        }
    }
    best
}

/// Sampled second-derivative maxima `(beta, rho per output, mu per column)`
/// over `samples` uniform points of `region`.
pub fn sampled_bounds(model: &SystemModel, region: &BoxRegion, samples: usize, seed: u64) -> (f64, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 1e-4;
    let mut beta = 0.0f64;
    let mut rho = vec![0.0f64; model.p()];
    let mut mu = vec![0.0f64; model.m()];
    for _ in 0..samples {
        let x: Vec<f64> = (0..model.n())
            .map(|k| rng.random_range(region.lower[k]..=region.upper[k]))
            .collect();
        beta = beta.max(fd_max_second_partial(&|y| model.f(y), &x, step));
        for (a, r) in rho.iter_mut().enumerate() {
            *r = r.max(fd_max_second_partial(&|y| vec![model.h(y)[a]], &x, step));
        }
        for (k, mk) in mu.iter_mut().enumerate() {
            let col = |y: &[f64]| model.g(y).column(k).iter().copied().collect::<Vec<f64>>();
            *mk = mk.max(fd_max_second_partial(&col, &x, step));
        }
    }
    (beta, rho, mu)
}
