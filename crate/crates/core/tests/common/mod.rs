#![allow(dead_code)]

use std::sync::Arc;

use cpa_gain::analysis::{sweep_levels, GainOptions, MeshSpec, SweepLevel};
use cpa_gain::geometry::{BoxRegion, KuhnSplit};
use cpa_gain::lmi::Mode;
use cpa_gain::system::{pendulum, KMode};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `l·x + x^T Q x + Σ d_k x_k^3 + s sin(w·x + a) + c cos(v·x + b) - value(0)`
/// with closed-form Hessians and entrywise Hessian bounds on boxes.
#[derive(Clone, Debug)]
pub struct TestFn {
    pub lin: Vec<f64>,
    pub quad: DMatrix<f64>,
    pub cubic: Vec<f64>,
    pub sin: (f64, Vec<f64>, f64),
    pub cos: (f64, Vec<f64>, f64),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl TestFn {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, lin_scale: f64, nl_scale: f64) -> Self {
        let mut r = |s: f64| rng.random_range(-s..=s);
        let lin = (0..n).map(|_| r(lin_scale)).collect();
        let q = DMatrix::from_fn(n, n, |_, _| r(nl_scale));
        let quad = (&q + q.transpose()) * 0.5;
        let cubic = (0..n).map(|_| r(nl_scale)).collect();
        let sin = (r(nl_scale), (0..n).map(|_| r(2.0)).collect(), r(3.0));
        let cos = (r(nl_scale), (0..n).map(|_| r(2.0)).collect(), r(3.0));
        Self { lin, quad, cubic, sin, cos }
    }

    fn raw(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut v = dot(&self.lin, x);
        for i in 0..n {
            for j in 0..n {
                v += x[i] * self.quad[(i, j)] * x[j];
            }
            v += self.cubic[i] * x[i].powi(3);
        }
        v + self.sin.0 * (dot(&self.sin.1, x) + self.sin.2).sin() + self.cos.0 * (dot(&self.cos.1, x) + self.cos.2).cos()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.raw(x) - self.raw(&vec![0.0; x.len()])
    }

    pub fn gradient_at_zero(&self) -> Vec<f64> {
        let (s, w, a) = &self.sin;
        let (c, v, b) = &self.cos;
        (0..self.lin.len()).map(|k| self.lin[k] + s * a.cos() * w[k] - c * b.sin() * v[k]).collect()
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let (s, w, a) = &self.sin;
        let (c, v, b) = &self.cos;
        let ss = -s * (dot(w, x) + a).sin();
        let cc = -c * (dot(v, x) + b).cos();
        DMatrix::from_fn(n, n, |q, r| {
            let mut h = 2.0 * self.quad[(q, r)] + ss * w[q] * w[r] + cc * v[q] * v[r];
            if q == r {
                h += 6.0 * self.cubic[q] * x[q];
            }
            h
        })
    }

    /// Bound on every `|∂²/∂x_q∂x_r|` over `|x_k| ≤ radius[k]`.
    pub fn hessian_bound(&self, radius: &[f64]) -> f64 {
        let n = radius.len();
        let mut best: f64 = 0.0;
        for q in 0..n {
            for r in 0..n {
                let mut h = (2.0 * self.quad[(q, r)]).abs()
                    + self.sin.0.abs() * (self.sin.1[q] * self.sin.1[r]).abs()
                    + self.cos.0.abs() * (self.cos.1[q] * self.cos.1[r]).abs();
                if q == r {
                    h += 6.0 * self.cubic[q].abs() * radius[q];
                }
                best = best.max(h);
            }
        }
        best
    }
}

/// Central-difference Hessian.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let at = |dq: f64, q: usize, dr: f64, r: usize| {
        let mut y = x.to_vec();
        y[q] += dq;
        y[r] += dr;
        f(&y)
    };
    DMatrix::from_fn(n, n, |q, r| {
        (at(h, q, h, r) - at(h, q, -h, r) - at(-h, q, h, r) + at(-h, q, -h, r)) / (4.0 * h * h)
    })
}

pub struct SimplexFamily {
    pub simplex: Vec<Vec<f64>>,
    pub phi: TestFn,
    pub zeta: Vec<TestFn>,
    pub beta: f64,
    pub mus: Vec<f64>,
}

/// Random non-degenerate simplexes in `[-1, 1]^n` with random test functions.
pub fn simplex_families(count: usize, seed: u64) -> Vec<SimplexFamily> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let n = 1 + out.len() % 3;
        let m = out.len() % 3;
        let simplex: Vec<Vec<f64>> = (0..=n).map(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
        let refs: Vec<&[f64]> = simplex.iter().map(|p| p.as_slice()).collect();
        if cpa_gain::geometry::vertex_matrix(&refs).is_err() {
            continue;
        }
        let radius: Vec<f64> = (0..n).map(|k| simplex.iter().map(|p| p[k].abs()).fold(0.0, f64::max)).collect();
        let phi = TestFn::random(&mut rng, n, 1.0, 1.0);
        let zeta: Vec<TestFn> = (0..m).map(|_| TestFn::random(&mut rng, n, 1.0, 0.5)).collect();
        let beta = phi.hessian_bound(&radius);
        let mus = zeta.iter().map(|z| z.hessian_bound(&radius)).collect();
        out.push(SimplexFamily { simplex, phi, zeta, beta, mus });
    }
    out
}

pub struct OriginFamily {
    pub epsilon: f64,
    pub theta: Vec<TestFn>,
    pub zeta: Vec<TestFn>,
    pub beta: f64,
    pub mu: f64,
}

impl OriginFamily {
    pub fn j_theta(&self) -> DMatrix<f64> {
        let n = self.theta.len();
        let rows: Vec<Vec<f64>> = self.theta.iter().map(|t| t.gradient_at_zero()).collect();
        DMatrix::from_fn(n, n, |p, q| rows[p][q])
    }

    pub fn j_zeta(&self) -> DMatrix<f64> {
        let n = self.theta.len();
        let rows: Vec<Vec<f64>> = self.zeta.iter().map(|t| t.gradient_at_zero()).collect();
        DMatrix::from_fn(self.zeta.len(), n, |p, q| rows[p][q])
    }
}

/// Random stable-at-the-origin `theta` and small `zeta`, with the radius
/// halved until the origin-ball matrix is negative semidefinite.
pub fn origin_families(count: usize, seed: u64) -> Vec<OriginFamily> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let n = 1 + out.len() % 3;
        let m = out.len() % 3;
        let decay = rng.random_range(0.5..2.0);
        let mut theta: Vec<TestFn> = (0..n).map(|_| TestFn::random(&mut rng, n, 0.3, 0.5)).collect();
        for (p, t) in theta.iter_mut().enumerate() {
            t.lin[p] -= decay;
        }
        let zeta: Vec<TestFn> = (0..m).map(|_| TestFn::random(&mut rng, n, 0.2, 0.5)).collect();
        let mut epsilon = rng.random_range(0.1..0.6);
        for _ in 0..12 {
            let radius = vec![epsilon; n];
            let fam = OriginFamily {
                epsilon,
                beta: theta.iter().map(|t| t.hessian_bound(&radius)).fold(0.0, f64::max),
                mu: zeta.iter().map(|t| t.hessian_bound(&radius)).fold(0.0, f64::max),
                theta: theta.clone(),
                zeta: zeta.clone(),
            };
            let mat = cpa_gain::check::origin_ball_matrix(&fam.j_theta(), &fam.j_zeta(), fam.beta, fam.mu, epsilon);
            if cpa_gain::lmi::max_eigenvalue(&mat) <= 0.0 {
                out.push(fam);
                break;
            }
            epsilon *= 0.5;
        }
    }
    out
}

pub fn region2() -> BoxRegion {
    BoxRegion::cube(2, 0.8).unwrap()
}

/// Control-affine pendulum sweep: 16 cells per axis, three levels
/// (512, 2048, 8192 simplexes).
pub fn affine_pendulum_sweep(levels: usize) -> Vec<SweepLevel> {
    let spec = MeshSpec { region: region2(), divisions: vec![16], boundary_segments: 0, split: KuhnSplit::Radial };
    sweep_levels(&pendulum(KMode::X2Affine), &spec, levels, Mode::Cpa, None, &GainOptions::default()).unwrap()
}

pub const K1_EPSILON: f64 = 0.08;

/// Constant-input pendulum sweep on annulus meshes: 14 cells per axis, 16
/// hole segments, three levels (392, 1568, 6272 simplexes).
pub fn constant_input_pendulum_sweep(levels: usize) -> Vec<SweepLevel> {
    let spec = MeshSpec { region: region2(), divisions: vec![14], boundary_segments: 16, split: KuhnSplit::Mirrored };
    sweep_levels(&pendulum(KMode::ConstantOne), &spec, levels, Mode::Hybrid, Some(K1_EPSILON), &GainOptions::default())
        .unwrap()
}

pub fn arc<T>(t: T) -> Arc<T> {
    Arc::new(t)
}
