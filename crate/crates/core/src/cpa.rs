//! Continuous piecewise-affine storage functions and the hybrid
//! quadratic-plus-CPA variant.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm2, Triangulation};

/// Largest tolerated residual of `X grad = W_bar`.
pub const GRADIENT_RESIDUAL_TOL: f64 = 1e-10;

/// The CPA interpolant of vertex values on a triangulation.
#[derive(Clone, Debug)]
pub struct CpaFunction {
    tri: Arc<Triangulation>,
    values: Vec<f64>,
    gradients: OnceLock<Vec<Result<DVector<f64>, f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexGradient {
    pub simplex_id: usize,
    pub grad: DVector<f64>,
}

impl CpaFunction {
    pub fn new(tri: Arc<Triangulation>, values: Vec<f64>) -> Result<Self> {
        if values.len() != tri.num_vertices() {
            return Err(Error::Precondition(format!(
                "expected {} vertex values, got {}",
                tri.num_vertices(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("vertex values must be finite".into()));
        }
        Ok(Self { tri, values, gradients: OnceLock::new() })
    }

    pub fn triangulation(&self) -> &Arc<Triangulation> {
        &self.tri
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn gradient_table(&self) -> &[Result<DVector<f64>, f64>] {
        self.gradients.get_or_init(|| {
            (0..self.tri.num_simplexes())
                .map(|sid| {
                    let vm = self.tri.vertex_matrix(sid).map_err(|e| match e {
                        Error::DegenerateSimplex { condition, .. } => condition,
                        _ => f64::INFINITY,
                    })?;
                    let ids = &self.tri.simplexes()[sid].vertex_ids;
                    let w_bar = DVector::from_iterator(
                        ids.len() - 1,
                        ids[1..].iter().map(|&v| self.values[v] - self.values[ids[0]]),
                    );
                    let grad = vm.x.clone().lu().solve(&w_bar).ok_or(f64::INFINITY)?;
                    let residual = (&vm.x * &grad - &w_bar).amax();
                    if residual > GRADIENT_RESIDUAL_TOL * (1.0 + w_bar.amax()) {
                        return Err(f64::INFINITY);
                    }
                    Ok(grad)
                })
                .collect()
        })
    }

    /// The constant gradient of the interpolant on simplex `sid`.
    pub fn gradient(&self, sid: usize) -> Result<SimplexGradient> {
        match &self.gradient_table()[sid] {
            Ok(grad) => Ok(SimplexGradient { simplex_id: sid, grad: grad.clone() }),
            Err(condition) => Err(Error::DegenerateSimplex { simplex: sid, condition: *condition }),
        }
    }

    /// Barycentric interpolation of the vertex values at `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let b = self.tri.locate(x)?;
        Ok(self.evaluate_in(b.simplex_id, &b.lambdas))
    }

    fn evaluate_in(&self, sid: usize, lambdas: &[f64]) -> f64 {
        self.tri.simplexes()[sid]
            .vertex_ids
            .iter()
            .zip(lambdas)
            .map(|(&v, l)| l * self.values[v])
            .sum()
    }

    /// Evaluation through the affine form `V(x_0) + grad^T (x - x_0)` of simplex `sid`.
    pub fn evaluate_affine(&self, sid: usize, x: &[f64]) -> Result<f64> {
        let g = self.gradient(sid)?;
        let v0 = self.tri.simplexes()[sid].vertex_ids[0];
        let x0 = self.tri.vertex(v0);
        Ok(self.values[v0] + x.iter().zip(x0).zip(g.grad.iter()).map(|((a, b), g)| g * (a - b)).sum::<f64>())
    }
}

/// `x^T P x` on the closed ball of radius `epsilon`, CPA outside.
#[derive(Clone, Debug)]
pub struct HybridStorage {
    pub p: DMatrix<f64>,
    pub epsilon: f64,
    pub cpa: CpaFunction,
}

impl HybridStorage {
    pub fn new(p: DMatrix<f64>, epsilon: f64, cpa: CpaFunction) -> Result<Self> {
        let n = cpa.tri.dim();
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::Precondition(format!("P must be {n}x{n}")));
        }
        if (&p - p.transpose()).amax() > 1e-12 {
            return Err(Error::Precondition("P must be symmetric".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Precondition("epsilon must be positive".into()));
        }
        Ok(Self { p, epsilon, cpa })
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        (v.transpose() * &self.p * &v)[(0, 0)]
    }

    /// Storage value at `x`; the sphere `|x| = epsilon` belongs to the quadratic part.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if norm2(x) <= self.epsilon {
            return Ok(self.quadratic(x));
        }
        if !self.cpa.tri.bounding_box().contains(x, 1e-12) {
            return Err(Error::OutOfRegion(x.to_vec()));
        }
        self.cpa.evaluate(x)
    }

    /// Gradient of the storage function at `x`: `2 P x` inside the ball, the
    /// simplex gradient outside.
    pub fn gradient_at(&self, x: &[f64]) -> Result<DVector<f64>> {
        if norm2(x) <= self.epsilon {
            return Ok(2.0 * &self.p * DVector::from_column_slice(x));
        }
        let b = self.cpa.tri.locate(x)?;
        Ok(self.cpa.gradient(b.simplex_id)?.grad)
    }
}

/// Plain CPA or hybrid storage.
#[derive(Clone, Debug)]
pub enum Storage {
    Cpa(CpaFunction),
    Hybrid(HybridStorage),
}

impl Storage {
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self {
            Storage::Cpa(c) => c.evaluate(x),
            Storage::Hybrid(h) => h.evaluate(x),
        }
    }

    pub fn gradient_at(&self, x: &[f64]) -> Result<DVector<f64>> {
        match self {
            Storage::Cpa(c) => {
                let b = c.tri.locate(x)?;
                Ok(c.gradient(b.simplex_id)?.grad)
            }
            Storage::Hybrid(h) => h.gradient_at(x),
        }
    }

    pub fn cpa(&self) -> &CpaFunction {
        match self {
            Storage::Cpa(c) => c,
            Storage::Hybrid(h) => &h.cpa,
        }
    }

    pub fn to_document(&self) -> StorageDocument {
        let cpa = self.cpa();
        let values = cpa.values.iter().copied().enumerate().collect();
        match self {
            Storage::Cpa(_) => StorageDocument { n: cpa.tri.dim(), values, p: None, epsilon: None },
            Storage::Hybrid(h) => StorageDocument {
                n: cpa.tri.dim(),
                values,
                p: Some(h.p.transpose().iter().copied().collect()),
                epsilon: Some(h.epsilon),
            },
        }
    }

    pub fn from_document(doc: &StorageDocument, tri: Arc<Triangulation>) -> Result<Self> {
        if doc.n != tri.dim() {
            return Err(Error::Format("storage and mesh dimensions differ".into()));
        }
        let mut values = vec![f64::NAN; tri.num_vertices()];
        for (&id, &v) in &doc.values {
            *values
                .get_mut(id)
                .ok_or_else(|| Error::Format(format!("vertex id {id} out of range")))? = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Format("storage document misses vertex values".into()));
        }
        let cpa = CpaFunction::new(tri, values)?;
        match (&doc.p, doc.epsilon) {
            (None, None) => Ok(Storage::Cpa(cpa)),
            (Some(p), Some(eps)) => {
                if p.len() != doc.n * doc.n {
                    return Err(Error::Format("P has the wrong length".into()));
                }
                let p = DMatrix::from_row_slice(doc.n, doc.n, p);
                Ok(Storage::Hybrid(HybridStorage::new(p, eps, cpa)?))
            }
            _ => Err(Error::Format("hybrid storage needs both P and epsilon".into())),
        }
    }
}

/// Storage function export: vertex values keyed by id, plus `P` (row-major)
/// and `epsilon` for hybrid storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageDocument {
    pub n: usize,
    pub values: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_kuhn_grid, BoxRegion};
    use proptest::prelude::*;

    fn triangle(pts: [[f64; 2]; 3], values: [f64; 3]) -> CpaFunction {
        let tri = Triangulation::from_parts(2, pts.iter().map(|p| p.to_vec()).collect(), vec![vec![0, 1, 2]], None).unwrap();
        CpaFunction::new(Arc::new(tri), values.to_vec()).unwrap()
    }

    #[test]
    fn gradient_examples() {
        let c = triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [0.0, 1.0, 2.0]);
        assert_eq!(c.gradient(0).unwrap().grad.as_slice(), &[1.0, 2.0]);
        let c = triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [3.0, 3.0, 3.0]);
        assert_eq!(c.gradient(0).unwrap().grad.as_slice(), &[0.0, 0.0]);
        let c = triangle([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]], [0.0, 1.0, 2.0]);
        let g = c.gradient(0).unwrap().grad;
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 1.0).abs() < 1e-15);
        let c = triangle([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], [0.0, 1.0, 2.0]);
        assert!(matches!(c.gradient(0), Err(Error::DegenerateSimplex { .. })));
    }

    #[test]
    fn evaluate_examples() {
        let tri = Arc::new(build_kuhn_grid(&BoxRegion::cube(2, 1.0).unwrap(), &[4]).unwrap());
        let values: Vec<f64> = (0..tri.num_vertices()).map(|i| (i as f64 * 0.37).sin()).collect();
        let c = CpaFunction::new(tri.clone(), values.clone()).unwrap();
        for v in tri.vertices() {
            assert_eq!(c.evaluate(&v.coords).unwrap(), values[v.id]);
        }
        let s = &tri.simplexes()[5].vertex_ids;
        let mid: Vec<f64> = (0..2).map(|k| 0.5 * (tri.vertex(s[0])[k] + tri.vertex(s[1])[k])).collect();
        assert!((c.evaluate(&mid).unwrap() - 0.5 * (values[s[0]] + values[s[1]])).abs() < 1e-14);
        assert!(matches!(c.evaluate(&[1.5, 0.0]), Err(Error::OutOfRegion(_))));
    }

    #[test]
    fn hybrid_examples() {
        let tri = Arc::new(crate::geometry::build_annulus(&BoxRegion::cube(2, 0.8).unwrap(), &[8], 0.1, 16).unwrap());
        let values = vec![1.0; tri.num_vertices()];
        let h = HybridStorage::new(DMatrix::identity(2, 2), 0.1, CpaFunction::new(tri, values).unwrap()).unwrap();
        assert_eq!(h.evaluate(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((h.evaluate(&[0.05, 0.0]).unwrap() - 0.0025).abs() < 1e-15);
        // on the sphere the quadratic branch wins
        assert!((h.evaluate(&[0.1, 0.0]).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(h.evaluate(&[0.5, 0.5]).unwrap(), 1.0);
        assert!(h.evaluate(&[0.9, 0.0]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let c = h.cpa.clone();
        assert!(HybridStorage::new(asym, 0.1, c).is_err());
    }

    #[test]
    fn document_round_trip() {
        let tri = Arc::new(crate::geometry::build_annulus(&BoxRegion::cube(2, 0.8).unwrap(), &[8], 0.1, 16).unwrap());
        let values: Vec<f64> = (0..tri.num_vertices()).map(|i| i as f64).collect();
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = Storage::Hybrid(HybridStorage::new(p.clone(), 0.1, CpaFunction::new(tri.clone(), values.clone()).unwrap()).unwrap());
        let json = serde_json::to_string(&s.to_document()).unwrap();
        let back = Storage::from_document(&serde_json::from_str(&json).unwrap(), tri).unwrap();
        let Storage::Hybrid(h) = back else { panic!("expected hybrid") };
        assert_eq!(h.p, p);
        assert_eq!(h.cpa.values(), values.as_slice());
    }

    proptest! {
        #[test]
        fn affine_paths_agree(seed in 0u64..1000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let tri = Arc::new(build_kuhn_grid(&BoxRegion::cube(2, 1.0).unwrap(), &[4]).unwrap());
            let values: Vec<f64> = (0..tri.num_vertices()).map(|i| ((i as u64 * 7 + seed) as f64).cos()).collect();
            let c = CpaFunction::new(tri.clone(), values.clone()).unwrap();
            let sid = (seed as usize) % tri.num_simplexes();
            let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
            let lam = [1.0 - a - b, a, b];
            let pts = tri.simplex_points(sid);
            let x: Vec<f64> = (0..2).map(|k| (0..3).map(|j| lam[j] * pts[j][k]).sum()).collect();
            let expect: f64 = (0..3).map(|j| lam[j] * values[tri.simplexes()[sid].vertex_ids[j]]).sum();
            prop_assert!((c.evaluate(&x).unwrap() - expect).abs() < 1e-10);
            prop_assert!((c.evaluate_affine(sid, &x).unwrap() - expect).abs() < 1e-10);
        }

        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..1000) {
            let tri = Arc::new(build_kuhn_grid(&BoxRegion::cube(2, 1.0).unwrap(), &[4]).unwrap());
            let values: Vec<f64> = (0..tri.num_vertices()).map(|i| ((i as u64 * 13 + seed) as f64).sin()).collect();
            let c = CpaFunction::new(tri.clone(), values).unwrap();
            let sid = (seed as usize) % tri.num_simplexes();
            let pts = tri.simplex_points(sid);
            let x: Vec<f64> = (0..2).map(|k| (pts[0][k] + pts[1][k] + pts[2][k]) / 3.0).collect();
            let g = c.gradient(sid).unwrap().grad;
            let h = 1e-6;
            for k in 0..2 {
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let fd = (c.evaluate_affine(sid, &xp).unwrap() - c.evaluate_affine(sid, &xm).unwrap()) / (2.0 * h);
                let fd_loc = (c.evaluate(&xp).unwrap() - c.evaluate(&xm).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() < 1e-6);
                prop_assert!((fd_loc - g[k]).abs() < 1e-6);
            }
        }

        #[test]
        fn shared_faces_agree(seed in 0u64..1000, t in 0.0f64..1.0) {
            let tri = Arc::new(build_kuhn_grid(&BoxRegion::cube(2, 1.0).unwrap(), &[4]).unwrap());
            let values: Vec<f64> = (0..tri.num_vertices()).map(|i| ((i as u64 * 5 + seed) as f64).sin()).collect();
            let c = CpaFunction::new(tri.clone(), values).unwrap();
            let a = (seed as usize) % tri.num_simplexes();
            let sa = &tri.simplexes()[a].vertex_ids;
            for b in 0..tri.num_simplexes() {
                let sb = &tri.simplexes()[b].vertex_ids;
                let shared: Vec<usize> = sa.iter().copied().filter(|v| sb.contains(v)).collect();
                if b == a || shared.len() != 2 {
                    continue;
                }
                let x: Vec<f64> = (0..2).map(|k| (1.0 - t) * tri.vertex(shared[0])[k] + t * tri.vertex(shared[1])[k]).collect();
                let va = c.evaluate_affine(a, &x).unwrap();
                let vb = c.evaluate_affine(b, &x).unwrap();
                prop_assert!((va - vb).abs() < 1e-10);
            }
        }
    }
}
