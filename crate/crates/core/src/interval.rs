//! Interval bounds for the elementary functions used by the shipped models.

use std::f64::consts::{FRAC_PI_2, PI};

/// Upper bound on `|sin x|` for `x` in `[lo, hi]`.
pub fn abs_sin_max(lo: f64, hi: f64) -> f64 {
    // |sin| peaks at pi/2 + k pi
    if contains_shifted_multiple(lo, hi, FRAC_PI_2) {
        1.0
    } else {
        lo.sin().abs().max(hi.sin().abs()).min(1.0)
    }
}

/// Upper bound on `|cos x|` for `x` in `[lo, hi]`.
pub fn abs_cos_max(lo: f64, hi: f64) -> f64 {
    if contains_shifted_multiple(lo, hi, 0.0) {
        1.0
    } else {
        lo.cos().abs().max(hi.cos().abs()).min(1.0)
    }
}

/// Upper bound on `|x|` for `x` in `[lo, hi]`.
pub fn abs_max(lo: f64, hi: f64) -> f64 {
    lo.abs().max(hi.abs())
}

/// Upper bound on `|x^k|` for `x` in `[lo, hi]`.
pub fn abs_pow_max(lo: f64, hi: f64, k: i32) -> f64 {
    abs_max(lo, hi).powi(k)
}

/// Whether `[lo, hi]` contains `offset + k pi` for some integer `k`.
fn contains_shifted_multiple(lo: f64, hi: f64, offset: f64) -> bool {
    if hi - lo >= PI {
        return true;
    }
    let k = ((lo - offset) / PI).ceil();
    offset + k * PI <= hi
}
