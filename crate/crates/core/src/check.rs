//! Independent verification: brute-force oracles for both error bounds,
//! HJI sampling of solved storage functions, and simulated gain ratios.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cpa::Storage;
use crate::error::{Error, Result};
use crate::geometry::{norm2, shape_constant, BoxRegion};
use crate::lmi::max_eigenvalue;
use crate::par;
use crate::system::SystemModel;

/// Barycentric margin below which a sample counts as on a simplex boundary.
pub const BOUNDARY_SKIP: f64 = 1e-9;

/// Non-finite floats are written as strings so reports stay valid JSON.
pub(crate) mod float_json {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum F {
            N(f64),
            S(String),
        }
        match F::deserialize(d)? {
            F::N(v) => Ok(v),
            F::S(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float '{other}'"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    /// Largest eigenvalue of the nominal HJI matrix over the samples.
    #[serde(with = "float_json")]
    pub max_violation: f64,
    pub num_samples: usize,
    pub skipped: usize,
    pub worst_point: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

/// Nominal HJI matrix `[[∇V^T f, ∇V^T (B + g), h^T], [*, -2γ² I, 0], [*, *, -2I]]`.
pub fn hji_matrix(model: &SystemModel, grad: &DVector<f64>, x: &[f64], gamma: f64) -> DMatrix<f64> {
    let (m, p) = (model.m(), model.p());
    let f = DVector::from_vec(model.f(x));
    let bg = model.input_matrix(x);
    let h = model.h(x);
    let mut mat = DMatrix::zeros(1 + m + p, 1 + m + p);
    mat[(0, 0)] = grad.dot(&f);
    let coupling = bg.transpose() * grad;
    for k in 0..m {
        mat[(1 + k, 0)] = coupling[k];
        mat[(0, 1 + k)] = coupling[k];
        mat[(1 + k, 1 + k)] = -2.0 * gamma * gamma;
    }
    for a in 0..p {
        mat[(1 + m + a, 0)] = h[a];
        mat[(0, 1 + m + a)] = h[a];
        mat[(1 + m + a, 1 + m + a)] = -2.0;
    }
    mat
}

/// Samples `region` uniformly and records the worst nominal HJI eigenvalue
/// with `∇V` from the storage function (`2 P x` inside the hybrid ball).
pub fn check_hji_samples(
    model: &SystemModel,
    storage: &Storage,
    gamma: f64,
    region: &BoxRegion,
    num_samples: usize,
    tol: f64,
    seed: u64,
) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..num_samples)
        .map(|_| (0..region.dim()).map(|k| rng.random_range(region.lower[k]..=region.upper[k])).collect())
        .collect();
    let values: Vec<Option<f64>> = par::map(&points, |x| {
        let grad = match storage {
            Storage::Hybrid(h) if norm2(x) <= h.epsilon => 2.0 * &h.p * DVector::from_column_slice(x),
            _ => {
                let cpa = storage.cpa();
                let b = cpa.triangulation().locate(x).ok()?;
                if b.lambdas.iter().any(|l| *l < BOUNDARY_SKIP) {
                    return None;
                }
                cpa.gradient(b.simplex_id).ok()?.grad
            }
        };
        Some(max_eigenvalue(&hji_matrix(model, &grad, x, gamma)))
    });
    let mut report = CheckReport {
        max_violation: f64::NEG_INFINITY,
        num_samples: 0,
        skipped: 0,
        worst_point: Vec::new(),
        tol,
        passed: true,
    };
    for (x, v) in points.into_iter().zip(values) {
        match v {
            Some(v) => {
                report.num_samples += 1;
                if v > report.max_violation {
                    report.max_violation = v;
                    report.worst_point = x;
                }
            }
            None => report.skipped += 1,
        }
    }
    report.passed = report.max_violation <= tol;
    report
}

/// Uniform random barycentric coordinates.
pub fn random_barycentric(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Hessian-magnitude bounds for the oracle routines.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianBounds {
    /// Bound for the scalar (or vector, in the origin oracle) drift term.
    pub beta: f64,
    /// Per-component bounds for `zeta` (the origin oracle uses their maximum).
    pub mus: Vec<f64>,
}

impl HessianBounds {
    fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || self.mus.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::InvalidBound(format!("{self:?}")));
        }
        Ok(())
    }
}

type ScalarFn<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);
type VectorFn<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

fn simplex_m(phi: ScalarFn, zeta: VectorFn, x: &[f64], shift: f64) -> DMatrix<f64> {
    let z = zeta(x);
    let m = z.len();
    let mut mat = DMatrix::zeros(1 + m, 1 + m);
    mat[(0, 0)] = phi(x) + shift;
    for k in 0..m {
        mat[(1 + k, 0)] = z[k];
        mat[(0, 1 + k)] = z[k];
        mat[(1 + k, 1 + k)] = -1.0;
    }
    mat
}

fn vertex_error(bounds: &HessianBounds, c: f64, m: usize) -> DMatrix<f64> {
    let mut e = DMatrix::identity(1 + m, 1 + m) * 0.5;
    e[(0, 0)] = 0.5 * (bounds.beta * c + bounds.mus.iter().map(|mu| mu * mu * c * c).sum::<f64>());
    e
}

fn point_in(pts: &[Vec<f64>], lam: &[f64]) -> Vec<f64> {
    let n = pts[0].len();
    (0..n).map(|k| pts.iter().zip(lam).map(|(p, l)| l * p[k]).sum()).collect()
}

/// Smallest eigenvalue of `E(x) - (M(x) - Σ λ_j M(x_j))` over random points
/// of the simplex, with `M = [[φ, ζ^T], [ζ, -I]]`. Nonnegative when the
/// error bound holds.
pub fn oracle_simplex_bound(
    phi: ScalarFn,
    zeta: VectorFn,
    bounds: &HessianBounds,
    simplex: &[Vec<f64>],
    num_draws: usize,
    seed: u64,
) -> Result<f64> {
    bounds.validate()?;
    let refs: Vec<&[f64]> = simplex.iter().map(|p| p.as_slice()).collect();
    let m = zeta(&simplex[0]).len();
    if bounds.mus.len() != m {
        return Err(Error::InvalidBound("one mu per zeta component expected".into()));
    }
    let vertex_m: Vec<DMatrix<f64>> = simplex.iter().map(|x| simplex_m(phi, zeta, x, 0.0)).collect();
    let vertex_e: Vec<DMatrix<f64>> = (0..simplex.len()).map(|j| vertex_error(bounds, shape_constant(&refs, j), m)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..num_draws {
        let lam = random_barycentric(&mut rng, simplex.len());
        let x = point_in(simplex, &lam);
        let mut d = -simplex_m(phi, zeta, &x, 0.0);
        for j in 0..simplex.len() {
            d += lam[j] * (&vertex_m[j] + &vertex_e[j]);
        }
        worst = worst.min(d.symmetric_eigenvalues().min());
    }
    Ok(worst)
}

/// Shifts `φ` so that `M(x_j) + E(x_j) ⪯ 0` holds at every vertex, then
/// returns the largest eigenvalue of `M(x)` over random interior points.
pub fn oracle_vertex_implication(
    phi: ScalarFn,
    zeta: VectorFn,
    bounds: &HessianBounds,
    simplex: &[Vec<f64>],
    num_draws: usize,
    seed: u64,
) -> Result<f64> {
    bounds.validate()?;
    let refs: Vec<&[f64]> = simplex.iter().map(|p| p.as_slice()).collect();
    let m = zeta(&simplex[0]).len();
    // [[a, z^T], [z, -½I]] ⪯ 0 iff a + 2|z|² ≤ 0
    let shift = -simplex
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let e = vertex_error(bounds, shape_constant(&refs, j), m)[(0, 0)];
            let z = zeta(x);
            phi(x) + e + 2.0 * z.iter().map(|v| v * v).sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..num_draws {
        let lam = random_barycentric(&mut rng, simplex.len());
        let x = point_in(simplex, &lam);
        worst = worst.max(max_eigenvalue(&simplex_m(phi, zeta, &x, shift)));
    }
    Ok(worst)
}

/// The origin-ball matrix `[[½(J_θ + J_θ^T + (ε n^1.5 β + ε² n² m μ²) I), J_ζ^T], [J_ζ, -½ I]]`.
pub fn origin_ball_matrix(j_theta: &DMatrix<f64>, j_zeta: &DMatrix<f64>, beta: f64, mu: f64, epsilon: f64) -> DMatrix<f64> {
    let n = j_theta.nrows();
    let m = j_zeta.nrows();
    let (nf, mf) = (n as f64, m as f64);
    let mut mat = DMatrix::zeros(n + m, n + m);
    let diag = epsilon * nf.powf(1.5) * beta + epsilon * epsilon * nf * nf * mf * mu * mu;
    let top = 0.5 * (j_theta + j_theta.transpose() + DMatrix::identity(n, n) * diag);
    mat.view_mut((0, 0), (n, n)).copy_from(&top);
    mat.view_mut((n, 0), (m, n)).copy_from(j_zeta);
    mat.view_mut((0, n), (n, m)).copy_from(&j_zeta.transpose());
    mat.view_mut((n, n), (m, m)).copy_from(&(DMatrix::identity(m, m) * -0.5));
    mat
}

/// Largest value of `ζ^T ζ + x^T θ(x)` over random points of the ball of
/// radius `epsilon`, after confirming the origin-ball matrix is ⪯ 0.
#[allow(clippy::too_many_arguments)]
pub fn oracle_origin_bound(
    theta: VectorFn,
    zeta: VectorFn,
    j_theta: &DMatrix<f64>,
    j_zeta: &DMatrix<f64>,
    bounds: &HessianBounds,
    epsilon: f64,
    num_draws: usize,
    seed: u64,
) -> Result<f64> {
    bounds.validate()?;
    let mu = bounds.mus.iter().copied().fold(0.0, f64::max);
    let mat = origin_ball_matrix(j_theta, j_zeta, bounds.beta, mu, epsilon);
    if max_eigenvalue(&mat) > 1e-12 {
        return Err(Error::Precondition("origin-ball matrix is not negative semidefinite".into()));
    }
    let n = j_theta.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..num_draws {
        let x = sample_ball(&mut rng, n, epsilon);
        let th = theta(&x);
        let z = zeta(&x);
        let v = z.iter().map(|a| a * a).sum::<f64>() + x.iter().zip(&th).map(|(a, b)| a * b).sum::<f64>();
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Uniform point in the closed ball of radius `r`.
pub fn sample_ball(rng: &mut impl Rng, n: usize, r: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let len = norm2(&dir).max(1e-300);
    let rad = r * rng.random::<f64>().powf(1.0 / n as f64);
    dir.into_iter().map(|v| v * rad / len).collect()
}

/// Input signal applied from the zero state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    Zero,
    Step { height: f64 },
    /// `Σ a_k sin(w_k t + phase_k)` on every input channel (one list per channel).
    Sines { channels: Vec<Vec<(f64, f64, f64)>> },
}

impl InputSignal {
    pub fn eval(&self, t: f64, m: usize) -> Vec<f64> {
        match self {
            InputSignal::Zero => vec![0.0; m],
            InputSignal::Step { height } => vec![*height; m],
            InputSignal::Sines { channels } => channels
                .iter()
                .map(|comps| comps.iter().map(|(a, w, ph)| a * (w * t + ph).sin()).sum())
                .collect(),
        }
    }

    /// A bound on `max |u_k(t)|`.
    pub fn amplitude(&self) -> f64 {
        match self {
            InputSignal::Zero => 0.0,
            InputSignal::Step { height } => height.abs(),
            InputSignal::Sines { channels } => channels
                .iter()
                .map(|c| c.iter().map(|(a, _, _)| a.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }
}

/// Seeded band-limited inputs: sums of `components` sinusoids with
/// frequencies up to `max_freq` rad/s, scaled so that `|u_k(t)| ≤ r_u`.
pub fn random_inputs(count: usize, m: usize, r_u: f64, components: usize, max_freq: f64, seed: u64) -> Vec<InputSignal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let channels = (0..m)
                .map(|_| {
                    let raw: Vec<(f64, f64, f64)> = (0..components)
                        .map(|_| {
                            (
                                rng.random_range(0.1..1.0),
                                rng.random_range(0.0..max_freq),
                                rng.random_range(0.0..std::f64::consts::TAU),
                            )
                        })
                        .collect();
                    let total: f64 = raw.iter().map(|c| c.0).sum();
                    raw.into_iter().map(|(a, w, p)| (a * r_u / total, w, p)).collect()
                })
                .collect();
            InputSignal::Sines { channels }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub input: InputSignal,
    pub horizon: f64,
    pub dt: f64,
    pub l2_ratio: f64,
    pub state_stayed_in_region: bool,
}

/// Integrates each input from the zero state with fixed-step RK4 and reports
/// `||y||_2 / ||u||_2` (trapezoid rule; `0` when both vanish).
pub fn empirical_gain_lower_bound(
    model: &SystemModel,
    inputs: &[InputSignal],
    horizon: f64,
    dt: f64,
    region: &BoxRegion,
) -> Result<Vec<SimulationResult>> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::Config("dt and horizon must be positive".into()));
    }
    Ok(par::map(inputs, |u| simulate(model, u, horizon, dt, region)))
}

pub fn simulate(model: &SystemModel, input: &InputSignal, horizon: f64, dt: f64, region: &BoxRegion) -> SimulationResult {
    let (n, m) = (model.n(), model.m());
    let steps = (horizon / dt).round() as usize;
    let mut x = vec![0.0; n];
    let mut inside = true;
    let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let mut y_prev = sq(&model.h(&x));
    let mut u_prev = sq(&input.eval(0.0, m));
    let (mut y2, mut u2) = (0.0, 0.0);
    let axpy = |x: &[f64], k: &[f64], s: f64| x.iter().zip(k).map(|(a, b)| a + s * b).collect::<Vec<f64>>();
    for i in 0..steps {
        let t = i as f64 * dt;
        let u0 = input.eval(t, m);
        let uh = input.eval(t + 0.5 * dt, m);
        let u1 = input.eval(t + dt, m);
        let k1 = model.dynamics(&x, &u0);
        let k2 = model.dynamics(&axpy(&x, &k1, 0.5 * dt), &uh);
        let k3 = model.dynamics(&axpy(&x, &k2, 0.5 * dt), &uh);
        let k4 = model.dynamics(&axpy(&x, &k3, dt), &u1);
        for j in 0..n {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if !x.iter().all(|v| v.is_finite()) {
            inside = false;
            break;
        }
        inside &= region.contains(&x, 0.0);
        let y_next = sq(&model.h(&x));
        let u_next = sq(&u1);
        y2 += 0.5 * dt * (y_prev + y_next);
        u2 += 0.5 * dt * (u_prev + u_next);
        y_prev = y_next;
        u_prev = u_next;
    }
    let l2_ratio = if u2 > 0.0 { (y2 / u2).sqrt() } else { 0.0 };
    SimulationResult { input: input.clone(), horizon, dt, l2_ratio, state_stayed_in_region: inside }
}
