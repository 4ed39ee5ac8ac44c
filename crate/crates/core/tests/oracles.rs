mod common;

use common::*;
use cpa_gain::check::{oracle_origin_bound, oracle_simplex_bound, oracle_vertex_implication, HessianBounds};
use cpa_gain::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn finite_differences_match_analytic_hessians() {
    for fam in simplex_families(24, 5) {
        let x = fam.simplex[0].clone();
        let f = |y: &[f64]| fam.phi.eval(y);
        let fd = fd_hessian(&f, &x, 1e-4);
        let an = fam.phi.hessian(&x);
        for (a, b) in fd.iter().zip(an.iter()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn hessian_bounds_dominate_sampled_entries() {
    for fam in simplex_families(12, 6) {
        for p in &fam.simplex {
            assert!(fam.phi.hessian(p).amax() <= fam.beta + 1e-12);
        }
    }
}

#[test]
fn quadratic_theta_with_linear_zeta() {
    // theta = -x + 0.3 x1^2 e1, zeta = 0.2 x1
    let theta = |x: &[f64]| vec![-x[0] + 0.3 * x[0] * x[0], -x[1]];
    let zeta = |x: &[f64]| vec![0.2 * x[0]];
    let jt = -DMatrix::identity(2, 2);
    let jz = DMatrix::from_row_slice(1, 2, &[0.2, 0.0]);
    let b = HessianBounds { beta: 0.6, mus: vec![0.0] };
    let r = oracle_origin_bound(&theta, &zeta, &jt, &jz, &b, 0.1, 1000, 8).unwrap();
    assert!(r <= 1e-9, "{r}");
}

#[test]
fn origin_oracle_rejects_negative_bounds() {
    let b = HessianBounds { beta: -0.1, mus: vec![] };
    let e = oracle_origin_bound(
        &|x: &[f64]| x.iter().map(|v| -v).collect(),
        &|_: &[f64]| Vec::new(),
        &-DMatrix::identity(1, 1),
        &DMatrix::zeros(0, 1),
        &b,
        0.1,
        10,
        1,
    );
    assert!(matches!(e, Err(Error::InvalidBound(_))));
}

#[test]
fn understated_bound_is_caught() {
    // -(x1^2 + x2^2) needs beta = 2; with beta = 0 the slack goes negative
    let phi = |x: &[f64]| -(x[0] * x[0] + x[1] * x[1]);
    let zeta = |_: &[f64]| Vec::new();
    let tri = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let b = HessianBounds { beta: 0.0, mus: vec![] };
    assert!(oracle_simplex_bound(&phi, &zeta, &b, &tri, 1000, 2).unwrap() < -1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simplex_bound_holds_for_random_families(seed in 0u64..10_000) {
        let fam = simplex_families(1, seed).pop().unwrap();
        let phi = |x: &[f64]| fam.phi.eval(x);
        let zeta = |x: &[f64]| fam.zeta.iter().map(|z| z.eval(x)).collect::<Vec<f64>>();
        let b = HessianBounds { beta: fam.beta, mus: fam.mus.clone() };
        prop_assert!(oracle_simplex_bound(&phi, &zeta, &b, &fam.simplex, 200, seed).unwrap() >= -1e-9);
        prop_assert!(oracle_vertex_implication(&phi, &zeta, &b, &fam.simplex, 200, seed).unwrap() <= 1e-9);
    }

    #[test]
    fn origin_bound_holds_for_random_families(seed in 0u64..10_000) {
        let fam = origin_families(1, seed).pop().unwrap();
        let theta = |x: &[f64]| fam.theta.iter().map(|t| t.eval(x)).collect::<Vec<f64>>();
        let zeta = |x: &[f64]| fam.zeta.iter().map(|t| t.eval(x)).collect::<Vec<f64>>();
        let b = HessianBounds { beta: fam.beta, mus: vec![fam.mu; fam.zeta.len()] };
        let r = oracle_origin_bound(&theta, &zeta, &fam.j_theta(), &fam.j_zeta(), &b, fam.epsilon, 200, seed).unwrap();
        prop_assert!(r <= 1e-9);
    }
}
