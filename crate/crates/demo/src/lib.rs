//! wasm-bindgen entry points for the static demo page in `www/`.
//!
//! Every entry point returns a JSON string; the `*_json` functions hold the
//! logic so native tests can call them without a JS host.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cpa_gain::analysis::GainCertificate;
use cpa_gain::check::{hji_matrix, simulate, InputSignal};
use cpa_gain::geometry::{build_annulus, build_kuhn_grid_with, BoxRegion, KuhnSplit, Triangulation};
use cpa_gain::system::builtin;
use cpa_gain::{Error, Result};

#[derive(Debug, Serialize)]
pub struct MeshView {
    pub num_simplexes: usize,
    pub num_vertices: usize,
    pub vertices: Vec<Vec<f64>>,
    pub simplexes: Vec<Vec<usize>>,
    pub contains_origin: Vec<bool>,
    /// Largest gain shape constant over the vertices of each simplex.
    pub shape: Vec<f64>,
    pub max_shape: f64,
}

fn mesh_view(tri: &Triangulation) -> MeshView {
    let shape: Vec<f64> = (0..tri.num_simplexes())
        .map(|s| (0..=tri.dim()).map(|j| tri.gain_shape_constant(s, j)).fold(0.0, f64::max))
        .collect();
    MeshView {
        num_simplexes: tri.num_simplexes(),
        num_vertices: tri.num_vertices(),
        vertices: tri.vertices().iter().map(|v| v.coords.clone()).collect(),
        simplexes: tri.simplexes().iter().map(|s| s.vertex_ids.clone()).collect(),
        contains_origin: tri.simplexes().iter().map(|s| s.contains_origin).collect(),
        max_shape: shape.iter().copied().fold(0.0, f64::max),
        shape,
    }
}

/// Square `[-half_width, half_width]^2` mesh after `refinements` halvings.
/// `hole > 0` cuts a hole of that radius about the origin.
pub fn mesh_json(half_width: f64, divisions: usize, refinements: usize, hole: f64, radial: bool) -> Result<String> {
    if refinements > 4 {
        return Err(Error::Config("at most 4 refinements in the demo".into()));
    }
    let region = BoxRegion::cube(2, half_width)?;
    let mut tri = if hole > 0.0 {
        build_annulus(&region, &[divisions], hole, 4 * divisions)?
    } else {
        let split = if radial { KuhnSplit::Radial } else { KuhnSplit::Mirrored };
        build_kuhn_grid_with(&region, &[divisions], split)?
    };
    for _ in 0..refinements {
        tri = tri.refine();
    }
    Ok(serde_json::to_string(&mesh_view(&tri))?)
}

/// Response to `a sin(w t)` on every input channel from the zero state.
pub fn simulate_json(system: &str, amplitude: f64, omega: f64, horizon: f64, dt: f64, half_width: f64) -> Result<String> {
    let model = builtin(system)?;
    let region = BoxRegion::cube(model.n(), half_width)?;
    if !(dt > 0.0) || !(horizon > 0.0) || horizon / dt > 1e6 {
        return Err(Error::Config("need dt > 0, horizon > 0 and at most 1e6 steps".into()));
    }
    let input = InputSignal::Sines { channels: vec![vec![(amplitude, omega, 0.0)]; model.m()] };
    Ok(serde_json::to_string(&simulate(&model, &input, horizon, dt, &region))?)
}

#[derive(Debug, Serialize)]
pub struct FieldView {
    pub system: String,
    pub gamma_star: f64,
    pub n: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: usize,
    /// Storage value per grid point, row-major with the first coordinate fastest.
    pub storage: Vec<Option<f64>>,
    /// Largest eigenvalue of the HJI matrix at each grid point.
    pub residual: Vec<Option<f64>>,
    pub max_residual: f64,
}

/// Storage values and HJI residuals of a certificate on a regular grid
/// (1-D or 2-D). Grid points the storage cannot evaluate come back as null.
pub fn field_json(certificate: &str, resolution: usize) -> Result<String> {
    let cert = GainCertificate::from_json(certificate)?;
    let model = builtin(&cert.system)?;
    let n = cert.region.dim();
    if n > 2 {
        return Err(Error::Config("the demo draws 1-D and 2-D certificates only".into()));
    }
    if !(2..=200).contains(&resolution) {
        return Err(Error::Config("resolution must be between 2 and 200".into()));
    }
    let (lo, hi) = (&cert.region.lower, &cert.region.upper);
    let coord = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (resolution - 1) as f64;
    let count = resolution.pow(n as u32);
    let mut storage = Vec::with_capacity(count);
    let mut residual = Vec::with_capacity(count);
    for idx in 0..count {
        let x: Vec<f64> = (0..n).map(|k| coord(k, idx / resolution.pow(k as u32) % resolution)).collect();
        storage.push(cert.storage.evaluate(&x).ok());
        residual.push(cert.storage.gradient_at(&x).ok().map(|g| {
            let m = hji_matrix(&model, &g, &x, cert.gamma_star);
            m.symmetric_eigen().eigenvalues.max()
        }));
    }
    let max_residual = residual.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(serde_json::to_string(&FieldView {
        system: cert.system.clone(),
        gamma_star: cert.gamma_star,
        n,
        lower: lo.clone(),
        upper: hi.clone(),
        resolution,
        storage,
        residual,
        max_residual,
    })?)
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn mesh(half_width: f64, divisions: usize, refinements: usize, hole: f64, radial: bool) -> std::result::Result<String, JsError> {
    js(mesh_json(half_width, divisions, refinements, hole, radial))
}

#[wasm_bindgen]
pub fn simulate_sine(
    system: &str,
    amplitude: f64,
    omega: f64,
    horizon: f64,
    dt: f64,
    half_width: f64,
) -> std::result::Result<String, JsError> {
    js(simulate_json(system, amplitude, omega, horizon, dt, half_width))
}

#[wasm_bindgen]
pub fn certificate_field(certificate: &str, resolution: usize) -> std::result::Result<String, JsError> {
    js(field_json(certificate, resolution))
}
