//! Simplicial triangulations of regions about the origin.
//!
//! A [`Triangulation`] owns its vertices and simplexes and is immutable once
//! built. Simplexes that contain the origin always list it as their first
//! vertex, which the origin-aware shape constant relies on.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition number of the vertex matrix above which a simplex is degenerate.
pub const DEGENERACY_CONDITION: f64 = 1e12;
/// Slack allowed on barycentric coordinates when locating points.
pub const LOCATE_TOL: f64 = 1e-10;
/// Distance from the hole sphere under which a vertex counts as a ring vertex.
const RING_TOL: f64 = 1e-12;

/// Axis-aligned box `[lower, upper]` in state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidRegion(
                "box bounds must be non-empty and of equal length".into(),
            ));
        }
        if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
            return Err(Error::InvalidRegion("box bounds must be finite".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
            return Err(Error::InvalidRegion("box lower bound must be below upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    /// The box `[-r_k, r_k]` on every axis.
    pub fn symmetric(half_widths: &[f64]) -> Result<Self> {
        Self::new(half_widths.iter().map(|h| -h).collect(), half_widths.to_vec())
    }

    /// The cube `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Result<Self> {
        Self::symmetric(&vec![r; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    pub fn contains_origin_strictly(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| *l < 0.0 && *u > 0.0)
    }

    /// Smallest distance from the origin to a face of the box.
    pub fn min_half_width(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (-l).min(*u))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn overlaps(&self, other: &BoxRegion, tol: f64) -> bool {
        (0..self.dim()).all(|k| {
            self.lower[k] <= other.upper[k] + tol && other.lower[k] <= self.upper[k] + tol
        })
    }

    fn of_points<'a>(points: impl Iterator<Item = &'a [f64]>, n: usize) -> Self {
        let mut lower = vec![f64::INFINITY; n];
        let mut upper = vec![f64::NEG_INFINITY; n];
        for p in points {
            for k in 0..n {
                lower[k] = lower[k].min(p[k]);
                upper[k] = upper[k].max(p[k]);
            }
        }
        Self { lower, upper }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: usize,
    pub coords: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    /// `n + 1` vertex ids; the origin comes first when `contains_origin`.
    pub vertex_ids: Vec<usize>,
    pub contains_origin: bool,
}

/// Barycentric coordinates of a point within a simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct Barycentric {
    pub simplex_id: usize,
    pub lambdas: Vec<f64>,
}

/// Per-simplex affine data: `X` has `x_j - x_0` as its j-th row.
#[derive(Clone, Debug)]
pub struct VertexMatrix {
    pub x: DMatrix<f64>,
    pub x_inv: DMatrix<f64>,
}

#[derive(Clone, Debug)]
struct SimplexCache {
    matrix: std::result::Result<VertexMatrix, f64>,
    bbox: BoxRegion,
}

#[derive(Clone, Debug)]
struct Locator {
    lower: Vec<f64>,
    cell: Vec<f64>,
    counts: Vec<usize>,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn bucket_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for k in (0..self.lower.len()).rev() {
            let t = (x[k] - self.lower[k]) / self.cell[k];
            if !(t > -1e-9 && t < self.counts[k] as f64 + 1e-9) {
                return None;
            }
            let c = (t.floor().max(0.0) as usize).min(self.counts[k] - 1);
            idx = idx * self.counts[k] + c;
        }
        Some(idx)
    }

    fn range_of(&self, b: &BoxRegion) -> Vec<(usize, usize)> {
        (0..self.lower.len())
            .map(|k| {
                let lo = ((b.lower[k] - self.lower[k]) / self.cell[k] - 1e-9).floor();
                let hi = ((b.upper[k] - self.lower[k]) / self.cell[k] + 1e-9).floor();
                let lo = lo.max(0.0) as usize;
                let hi = (hi.max(0.0) as usize).min(self.counts[k] - 1);
                (lo.min(hi), hi)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
struct Cache {
    simplexes: OnceLock<Vec<SimplexCache>>,
    locator: OnceLock<Locator>,
}

/// A triangulation of a box region, optionally with a spherical hole about the origin.
#[derive(Clone, Debug)]
pub struct Triangulation {
    dim: usize,
    vertices: Vec<Vertex>,
    simplexes: Vec<Simplex>,
    bounding_box: BoxRegion,
    hole_radius: Option<f64>,
    cache: Cache,
}

impl PartialEq for Triangulation {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.vertices == other.vertices
            && self.simplexes == other.simplexes
            && self.bounding_box == other.bounding_box
            && self.hole_radius == other.hole_radius
    }
}

impl Triangulation {
    /// Assembles a triangulation from raw parts. Origin flags are recomputed
    /// from the coordinates; ordering is left as given so that [`validate`]
    /// can report violations.
    pub fn from_parts(
        dim: usize,
        coords: Vec<Vec<f64>>,
        simplexes: Vec<Vec<usize>>,
        hole_radius: Option<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidRegion("dimension must be positive".into()));
        }
        for (i, c) in coords.iter().enumerate() {
            if c.len() != dim || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("vertex {i} has invalid coordinates")));
            }
        }
        for (i, s) in simplexes.iter().enumerate() {
            if s.len() != dim + 1 || s.iter().any(|&v| v >= coords.len()) {
                return Err(Error::Format(format!("simplex {i} has invalid vertex list")));
            }
        }
        let bounding_box = BoxRegion::of_points(coords.iter().map(|c| c.as_slice()), dim);
        let vertices = coords
            .into_iter()
            .enumerate()
            .map(|(id, coords)| Vertex { id, coords })
            .collect::<Vec<_>>();
        let simplexes = simplexes
            .into_iter()
            .map(|vertex_ids| {
                let contains_origin = simplex_contains_origin(&vertices, &vertex_ids);
                Simplex { vertex_ids, contains_origin }
            })
            .collect();
        Ok(Self {
            dim,
            vertices,
            simplexes,
            bounding_box,
            hole_radius,
            cache: Cache::default(),
        })
    }

    fn assemble(
        dim: usize,
        coords: Vec<Vec<f64>>,
        simplexes: Vec<Vec<usize>>,
        bounding_box: BoxRegion,
        hole_radius: Option<f64>,
    ) -> Self {
        let vertices: Vec<Vertex> = coords
            .into_iter()
            .enumerate()
            .map(|(id, coords)| Vertex { id, coords })
            .collect();
        let simplexes = simplexes
            .into_iter()
            .map(|mut vertex_ids| {
                let origin_pos = vertex_ids
                    .iter()
                    .position(|&v| vertices[v].coords.iter().all(|c| *c == 0.0));
                if let Some(pos) = origin_pos {
                    let o = vertex_ids.remove(pos);
                    vertex_ids.insert(0, o);
                }
                Simplex { vertex_ids, contains_origin: origin_pos.is_some() }
            })
            .collect();
        Self {
            dim,
            vertices,
            simplexes,
            bounding_box,
            hole_radius,
            cache: Cache::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn simplexes(&self) -> &[Simplex] {
        &self.simplexes
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_simplexes(&self) -> usize {
        self.simplexes.len()
    }

    pub fn bounding_box(&self) -> &BoxRegion {
        &self.bounding_box
    }

    /// Radius of the spherical hole about the origin, for annulus meshes.
    pub fn hole_radius(&self) -> Option<f64> {
        self.hole_radius
    }

    pub fn vertex(&self, id: usize) -> &[f64] {
        &self.vertices[id].coords
    }

    /// Coordinates of the vertices of simplex `sid`, in simplex order.
    pub fn simplex_points(&self, sid: usize) -> Vec<&[f64]> {
        self.simplexes[sid]
            .vertex_ids
            .iter()
            .map(|&v| self.vertices[v].coords.as_slice())
            .collect()
    }

    /// Index of the origin vertex, if the origin is a mesh vertex.
    pub fn origin_vertex(&self) -> Option<usize> {
        self.vertices
            .iter()
            .position(|v| v.coords.iter().all(|c| *c == 0.0))
    }

    fn simplex_cache(&self) -> &[SimplexCache] {
        self.cache.simplexes.get_or_init(|| {
            (0..self.simplexes.len())
                .map(|sid| {
                    let pts = self.simplex_points(sid);
                    SimplexCache {
                        matrix: compute_vertex_matrix(&pts),
                        bbox: BoxRegion::of_points(pts.iter().copied(), self.dim),
                    }
                })
                .collect()
        })
    }

    /// `X` (rows `x_j - x_0`) and its inverse for simplex `sid`.
    pub fn vertex_matrix(&self, sid: usize) -> Result<&VertexMatrix> {
        match &self.simplex_cache()[sid].matrix {
            Ok(m) => Ok(m),
            Err(cond) => Err(Error::DegenerateSimplex { simplex: sid, condition: *cond }),
        }
    }

    /// Axis-aligned bounding box of simplex `sid`.
    pub fn simplex_bbox(&self, sid: usize) -> &BoxRegion {
        &self.simplex_cache()[sid].bbox
    }

    /// Shape constant from the origin-anchored Taylor bound; zero at `j = 0`.
    pub fn shape_constant_origin(&self, sid: usize, j: usize) -> f64 {
        shape_constant_origin(&self.simplex_points(sid), j)
    }

    /// Shape constant `n max_v ||x_j - x_v||_2^2`.
    pub fn shape_constant(&self, sid: usize, j: usize) -> f64 {
        shape_constant(&self.simplex_points(sid), j)
    }

    /// The constant used in gain constraints: origin-anchored for simplexes
    /// containing the origin, the pairwise form otherwise.
    pub fn gain_shape_constant(&self, sid: usize, j: usize) -> f64 {
        if self.simplexes[sid].contains_origin {
            self.shape_constant_origin(sid, j)
        } else {
            self.shape_constant(sid, j)
        }
    }

    /// Barycentric coordinates of `x` with respect to simplex `sid`.
    pub fn barycentric_in(&self, sid: usize, x: &[f64]) -> Result<Vec<f64>> {
        let vm = self.vertex_matrix(sid)?;
        let x0 = self.vertex(self.simplexes[sid].vertex_ids[0]);
        Ok(barycentric_from(vm, x0, x))
    }

    fn locator(&self) -> &Locator {
        self.cache.locator.get_or_init(|| {
            let n = self.dim;
            let target = (self.simplexes.len().max(1) as f64 / 2.0).powf(1.0 / n as f64);
            let per_axis = (target.ceil() as usize).clamp(1, 512);
            let lower = self.bounding_box.lower.clone();
            let cell: Vec<f64> = (0..n)
                .map(|k| ((self.bounding_box.upper[k] - lower[k]) / per_axis as f64).max(1e-300))
                .collect();
            let counts = vec![per_axis; n];
            let mut loc = Locator {
                lower,
                cell,
                counts,
                buckets: vec![Vec::new(); per_axis.pow(n as u32)],
            };
            for sid in 0..self.simplexes.len() {
                let ranges = loc.range_of(self.simplex_bbox(sid));
                for_each_index(&ranges, |idx| {
                    let mut b = 0;
                    for k in (0..n).rev() {
                        b = b * loc.counts[k] + idx[k];
                    }
                    loc.buckets[b].push(sid);
                });
            }
            loc
        })
    }

    /// Locates `x`, returning the lowest-id simplex containing it.
    pub fn locate(&self, x: &[f64]) -> Result<Barycentric> {
        if x.len() != self.dim {
            return Err(Error::OutOfRegion(x.to_vec()));
        }
        let loc = self.locator();
        let bucket = loc.bucket_of(x).ok_or_else(|| Error::OutOfRegion(x.to_vec()))?;
        for &sid in &loc.buckets[bucket] {
            if !self.simplex_bbox(sid).contains(x, 1e-9) {
                continue;
            }
            let Ok(lambdas) = self.barycentric_in(sid, x) else {
                continue;
            };
            if lambdas.iter().all(|l| *l >= -LOCATE_TOL) {
                return Ok(Barycentric { simplex_id: sid, lambdas });
            }
        }
        Err(Error::OutOfRegion(x.to_vec()))
    }

    /// Candidate simplex pairs whose bounding boxes overlap.
    fn overlapping_pairs(&self) -> Vec<(usize, usize)> {
        let loc = self.locator();
        let mut pairs = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for bucket in &loc.buckets {
            for (a_pos, &a) in bucket.iter().enumerate() {
                for &b in &bucket[a_pos + 1..] {
                    let key = (a.min(b), a.max(b));
                    if seen.insert(key)
                        && self.simplex_bbox(a).overlaps(self.simplex_bbox(b), 1e-12)
                    {
                        pairs.push(key);
                    }
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// Checks the mesh against the triangulation axioms.
    pub fn validate(&self) -> ValidationReport {
        self.validate_with(2000, 7)
    }

    pub fn validate_with(&self, coverage_samples: usize, seed: u64) -> ValidationReport {
        let mut report = ValidationReport::default();
        let cache = self.simplex_cache();
        for (sid, s) in self.simplexes.iter().enumerate() {
            if cache[sid].matrix.is_err() || has_duplicates(&s.vertex_ids) {
                report.affine_failures.push(sid);
                continue;
            }
            let pts = self.simplex_points(sid);
            let origin_inside = {
                let lam = barycentric_from(cache[sid].matrix.as_ref().unwrap(), pts[0], &vec![0.0; self.dim]);
                lam.iter().all(|l| *l >= -LOCATE_TOL)
            };
            let first_is_origin = pts[0].iter().all(|c| *c == 0.0);
            let misplaced = (origin_inside || s.contains_origin) && !first_is_origin;
            if misplaced || origin_inside != s.contains_origin {
                report.origin_violations.push(sid);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..coverage_samples {
            let x: Vec<f64> = (0..self.dim)
                .map(|k| rng.random_range(self.bounding_box.lower[k]..=self.bounding_box.upper[k]))
                .collect();
            if let Some(r) = self.hole_radius {
                if norm2(&x) <= r {
                    continue;
                }
            }
            report.samples_checked += 1;
            if self.locate(&x).is_err() {
                report.coverage_gaps.push(x);
            }
        }

        for (a, b) in self.overlapping_pairs() {
            if report.affine_failures.contains(&a) || report.affine_failures.contains(&b) {
                continue;
            }
            if !self.proper_intersection(a, b) {
                report.face_violations.push((a, b));
            }
        }
        report
    }

    /// True when simplexes `a` and `b` meet in a common face (or not at all).
    fn proper_intersection(&self, a: usize, b: usize) -> bool {
        let va = &self.simplexes[a].vertex_ids;
        let vb = &self.simplexes[b].vertex_ids;
        if sorted(va) == sorted(vb) {
            return false;
        }
        let tol = 1e-9;
        let strictly_inside =
            |sid: usize, p: &[f64]| self.barycentric_in(sid, p).map(|l| l.iter().all(|v| *v > tol)).unwrap_or(false);
        let weakly_inside =
            |sid: usize, p: &[f64]| self.barycentric_in(sid, p).map(|l| l.iter().all(|v| *v >= -tol)).unwrap_or(false);

        for (s, other, ids) in [(a, b, vb), (b, a, va)] {
            let own = &self.simplexes[s].vertex_ids;
            for &v in ids {
                if !own.contains(&v) && weakly_inside(s, self.vertex(v)) {
                    return false;
                }
            }
            let pts = self.simplex_points(other);
            let centroid = centroid(&pts);
            if strictly_inside(s, &centroid) {
                return false;
            }
            // probes just inside each vertex of `other`
            for p in &pts {
                let probe: Vec<f64> = p.iter().zip(&centroid).map(|(x, c)| x + 1e-3 * (c - x)).collect();
                if strictly_inside(s, &probe) {
                    return false;
                }
            }
        }
        if self.dim == 2 {
            for i in 0..3 {
                for j in 0..3 {
                    let (p0, p1) = (va[i], va[(i + 1) % 3]);
                    let (q0, q1) = (vb[j], vb[(j + 1) % 3]);
                    let shared = [p0 == q0, p0 == q1, p1 == q0, p1 == q1];
                    if shared.iter().any(|s| *s) {
                        continue;
                    }
                    if segments_cross(self.vertex(p0), self.vertex(p1), self.vertex(q0), self.vertex(q1)) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Uniform refinement: every simplex is split into `2^n` children through
    /// its edge midpoints (midpoint quadrisection in the plane). Midpoints of
    /// hole-boundary edges are pushed back onto the hole sphere.
    pub fn refine(&self) -> Triangulation {
        let n = self.dim;
        let template = reference_children(n);
        let mut coords: Vec<Vec<f64>> = self.vertices.iter().map(|v| v.coords.clone()).collect();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let ring_edges = self.hole_boundary_edges();
        let mut simplexes = Vec::with_capacity(self.simplexes.len() << n);

        for s in &self.simplexes {
            let ordered = sorted(&s.vertex_ids);
            for child in &template {
                let ids: Vec<usize> = child
                    .iter()
                    .map(|&(i, j)| {
                        let (a, b) = (ordered[i], ordered[j]);
                        if a == b {
                            return a;
                        }
                        let key = (a.min(b), a.max(b));
                        *midpoints.entry(key).or_insert_with(|| {
                            let mut m: Vec<f64> = coords[a]
                                .iter()
                                .zip(&coords[b])
                                .map(|(p, q)| 0.5 * (p + q))
                                .collect();
                            if let (Some(r), true) = (self.hole_radius, ring_edges.contains(&key)) {
                                let len = norm2(&m);
                                m.iter_mut().for_each(|c| *c *= r / len);
                            }
                            coords.push(m);
                            coords.len() - 1
                        })
                    })
                    .collect();
                simplexes.push(ids);
            }
        }
        Triangulation::assemble(n, coords, simplexes, self.bounding_box.clone(), self.hole_radius)
    }

    /// Boundary edges (facets in the plane) whose endpoints all lie on the hole sphere.
    fn hole_boundary_edges(&self) -> std::collections::HashSet<(usize, usize)> {
        let mut out = std::collections::HashSet::new();
        let Some(r) = self.hole_radius else {
            return out;
        };
        if self.dim != 2 {
            return out;
        }
        let on_ring: Vec<bool> = self
            .vertices
            .iter()
            .map(|v| (norm2(&v.coords) - r).abs() <= RING_TOL * r.max(1.0) * 10.0)
            .collect();
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for s in &self.simplexes {
            for i in 0..3 {
                let (a, b) = (s.vertex_ids[i], s.vertex_ids[(i + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        for ((a, b), c) in counts {
            if c == 1 && on_ring[a] && on_ring[b] {
                out.insert((a, b));
            }
        }
        out
    }

    pub fn to_document(&self) -> MeshDocument {
        MeshDocument {
            version: MeshDocument::VERSION,
            n: self.dim,
            vertices: self.vertices.iter().map(|v| v.coords.clone()).collect(),
            simplexes: self
                .simplexes
                .iter()
                .map(|s| MeshSimplex { verts: s.vertex_ids.clone(), origin: s.contains_origin })
                .collect(),
            hole_radius: self.hole_radius,
        }
    }

    pub fn from_document(doc: &MeshDocument) -> Result<Self> {
        if doc.version != MeshDocument::VERSION {
            return Err(Error::Format(format!("unsupported mesh version {}", doc.version)));
        }
        let mut tri = Triangulation::from_parts(
            doc.n,
            doc.vertices.clone(),
            doc.simplexes.iter().map(|s| s.verts.clone()).collect(),
            doc.hole_radius,
        )?;
        for (s, d) in tri.simplexes.iter_mut().zip(&doc.simplexes) {
            s.contains_origin = d.origin;
        }
        Ok(tri)
    }
}

/// Versioned mesh interchange document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshDocument {
    pub version: u32,
    pub n: usize,
    pub vertices: Vec<Vec<f64>>,
    pub simplexes: Vec<MeshSimplex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hole_radius: Option<f64>,
}

impl MeshDocument {
    pub const VERSION: u32 = 1;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSimplex {
    pub verts: Vec<usize>,
    pub origin: bool,
}

/// Outcome of [`Triangulation::validate`].
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub affine_failures: Vec<usize>,
    pub origin_violations: Vec<usize>,
    pub coverage_gaps: Vec<Vec<f64>>,
    pub face_violations: Vec<(usize, usize)>,
    pub samples_checked: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.affine_failures.is_empty()
            && self.origin_violations.is_empty()
            && self.coverage_gaps.is_empty()
            && self.face_violations.is_empty()
    }
}

/// How each grid cube is cut into `n!` simplexes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KuhnSplit {
    /// Split direction alternates across axes per orthant; in 2-D the cells
    /// at the origin have their diagonals off the origin (4 origin triangles).
    #[default]
    Mirrored,
    /// Every cell diagonal points away from the origin, so all `2^n n!`
    /// simplexes of the cells at the origin share it.
    Radial,
}

/// Builds a Kuhn-type grid triangulation of `region` with grid lines through
/// the origin. Each orthant uses a mirrored cube split so the triangulation is
/// symmetric about every coordinate hyperplane.
pub fn build_kuhn_grid(region: &BoxRegion, divisions: &[usize]) -> Result<Triangulation> {
    build_kuhn_grid_with(region, divisions, KuhnSplit::Mirrored)
}

pub fn build_kuhn_grid_with(region: &BoxRegion, divisions: &[usize], split: KuhnSplit) -> Result<Triangulation> {
    let grid = Grid::new(region, divisions)?;
    let n = grid.n;
    let mut simplexes = Vec::new();
    let perms = permutations(n);
    for_each_index(&grid.cells.iter().map(|&c| (0, c - 1)).collect::<Vec<_>>(), |cell| {
        simplexes.extend(grid.cell_simplexes(cell, &perms, split));
    });
    let coords = (0..grid.num_vertices()).map(|v| grid.coords(&grid.unflatten(v))).collect();
    Ok(Triangulation::assemble(n, coords, simplexes, region.clone(), None))
}

/// Builds a triangulation of `region` minus the open ball of radius
/// `epsilon`. The hole is a polygon inscribed in the sphere (two points in
/// one dimension), so the simplexes plus the closed ball cover the region.
pub fn build_annulus(
    region: &BoxRegion,
    divisions: &[usize],
    epsilon: f64,
    boundary_segments: usize,
) -> Result<Triangulation> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidRegion("hole radius must be positive".into()));
    }
    if epsilon >= 0.5 * region.min_half_width() {
        return Err(Error::InvalidRegion(format!(
            "hole radius {epsilon} must be below half the smallest box half-width"
        )));
    }
    let grid = Grid::new(region, divisions)?;
    match grid.n {
        1 => annulus_1d(&grid, region, epsilon),
        2 => {
            if boundary_segments < 8 {
                return Err(Error::InvalidRegion("at least 8 boundary segments are required".into()));
            }
            annulus_2d(&grid, region, epsilon, boundary_segments)
        }
        n => Err(Error::InvalidRegion(format!("annulus meshes are supported for n <= 2, got {n}"))),
    }
}

fn annulus_1d(grid: &Grid, region: &BoxRegion, epsilon: f64) -> Result<Triangulation> {
    let h = grid.step[0];
    let mut neg: Vec<f64> = Vec::new();
    let mut pos: Vec<f64> = Vec::new();
    for i in 0..=grid.cells[0] {
        let x = grid.coords(&[i])[0];
        if x < -epsilon - 1e-9 * h {
            neg.push(x);
        } else if x > epsilon + 1e-9 * h {
            pos.push(x);
        }
    }
    neg.push(-epsilon);
    pos.insert(0, epsilon);
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut simplexes = Vec::new();
    for side in [neg, pos] {
        let base = coords.len();
        coords.extend(side.iter().map(|x| vec![*x]));
        for k in 0..side.len() - 1 {
            simplexes.push(vec![base + k, base + k + 1]);
        }
    }
    Ok(Triangulation::assemble(1, coords, simplexes, region.clone(), Some(epsilon)))
}

fn annulus_2d(grid: &Grid, region: &BoxRegion, epsilon: f64, segments: usize) -> Result<Triangulation> {
    let perms = permutations(2);
    // cells per half-axis in the removed block around the origin
    let mut half: Vec<usize> = (0..2)
        .map(|k| ((2.0 * epsilon / grid.step[k]) - 1e-9).ceil().max(1.0) as usize)
        .collect();
    loop {
        if (0..2).any(|k| half[k] > grid.origin[k] || half[k] > grid.cells[k] - grid.origin[k]) {
            return Err(Error::InvalidRegion(format!(
                "hole radius {epsilon} does not fit the grid"
            )));
        }
        if let Some(tri) = try_annulus_2d(grid, region, epsilon, segments, &half, &perms) {
            return Ok(tri);
        }
        half.iter_mut().for_each(|h| *h += 1);
    }
}

fn try_annulus_2d(
    grid: &Grid,
    region: &BoxRegion,
    epsilon: f64,
    segments: usize,
    half: &[usize],
    perms: &[Vec<usize>],
) -> Option<Triangulation> {
    let in_block = |cell: &[usize]| {
        (0..2).all(|k| {
            let c = cell[k] as i64 - grid.origin[k] as i64;
            c >= -(half[k] as i64) && c < half[k] as i64
        })
    };
    let mut grid_simplexes: Vec<Vec<usize>> = Vec::new();
    for_each_index(&grid.cells.iter().map(|&c| (0, c - 1)).collect::<Vec<_>>(), |cell| {
        if !in_block(cell) {
            grid_simplexes.extend(grid.cell_simplexes(cell, perms, KuhnSplit::Mirrored));
        }
    });

    // block boundary loop, counter-clockwise from the positive x1 axis
    let (o0, o1) = (grid.origin[0] as i64, grid.origin[1] as i64);
    let (h0, h1) = (half[0] as i64, half[1] as i64);
    let mut outer: Vec<[i64; 2]> = Vec::new();
    for j in 0..h1 {
        outer.push([h0, j]);
    }
    for i in (-h0 + 1..=h0).rev() {
        outer.push([i, h1]);
    }
    for j in (-h1 + 1..=h1).rev() {
        outer.push([-h0, j]);
    }
    for i in -h0..h0 {
        outer.push([i, -h1]);
    }
    for j in -h1..0 {
        outer.push([h0, j]);
    }
    let outer_ids: Vec<usize> = outer
        .iter()
        .map(|[i, j]| grid.flatten(&[(o0 + i) as usize, (o1 + j) as usize]))
        .collect();

    let mut coords: Vec<Vec<f64>> = (0..grid.num_vertices()).map(|v| grid.coords(&grid.unflatten(v))).collect();
    let ring_base = coords.len();
    for i in 0..segments {
        let t = 2.0 * PI * i as f64 / segments as f64;
        coords.push(vec![epsilon * t.cos(), epsilon * t.sin()]);
    }
    let ring_ids: Vec<usize> = (ring_base..ring_base + segments).collect();

    let angle = |p: &[f64]| {
        let a = p[1].atan2(p[0]);
        if a < -1e-12 { a + 2.0 * PI } else { a.max(0.0) }
    };
    let (ni, no) = (ring_ids.len(), outer_ids.len());
    let inner_angle = |i: usize| if i == ni { 2.0 * PI } else { angle(&coords[ring_ids[i]]) };
    let outer_angle = |j: usize| if j == no { 2.0 * PI } else { angle(&coords[outer_ids[j]]) };
    let cross = |a: &[f64], b: &[f64], c: &[f64]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);

    // p must lie strictly outside both ring chords meeting at ring vertex r
    let outside = |r: usize, p: &[f64]| {
        let prev = &coords[ring_ids[(r + ni - 1) % ni]];
        let here = &coords[ring_ids[r % ni]];
        let next = &coords[ring_ids[(r + 1) % ni]];
        cross(prev, here, p) < -1e-14 && cross(here, next, p) < -1e-14
    };
    let mut strip: Vec<Vec<usize>> = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < ni || j < no {
        let advance_inner = j == no || (i < ni && inner_angle(i + 1) <= outer_angle(j + 1));
        if advance_inner {
            let c = &coords[outer_ids[j % no]];
            if !outside(i, c) || !outside(i + 1, c) {
                return None;
            }
            strip.push(vec![ring_ids[i], outer_ids[j % no], ring_ids[(i + 1) % ni]]);
            i += 1;
        } else {
            let (a, b) = (outer_ids[j], outer_ids[(j + 1) % no]);
            if cross(&coords[a], &coords[b], &coords[ring_ids[i % ni]]) <= 1e-14
                || !outside(i, &coords[a])
                || !outside(i, &coords[b])
            {
                return None;
            }
            strip.push(vec![a, b, ring_ids[i % ni]]);
            j += 1;
        }
    }

    // compact to the vertices actually used
    let mut simplexes = grid_simplexes;
    simplexes.extend(strip);
    let mut remap = vec![usize::MAX; coords.len()];
    let mut used = Vec::new();
    for s in &mut simplexes {
        for v in s.iter_mut() {
            if remap[*v] == usize::MAX {
                remap[*v] = used.len();
                used.push(*v);
            }
            *v = remap[*v];
        }
    }
    let mut order: Vec<usize> = (0..used.len()).collect();
    order.sort_by_key(|&k| used[k]);
    let mut rank = vec![0; used.len()];
    for (r, &k) in order.iter().enumerate() {
        rank[k] = r;
    }
    for s in &mut simplexes {
        s.iter_mut().for_each(|v| *v = rank[*v]);
    }
    let coords = order.iter().map(|&k| coords[used[k]].clone()).collect();
    Some(Triangulation::assemble(2, coords, simplexes, region.clone(), Some(epsilon)))
}

struct Grid {
    n: usize,
    lower: Vec<f64>,
    step: Vec<f64>,
    cells: Vec<usize>,
    origin: Vec<usize>,
}

impl Grid {
    fn new(region: &BoxRegion, divisions: &[usize]) -> Result<Self> {
        let n = region.dim();
        if !region.contains_origin_strictly() {
            return Err(Error::InvalidRegion("box must contain the origin in its interior".into()));
        }
        let divisions: Vec<usize> = match divisions.len() {
            1 => vec![divisions[0]; n],
            d if d == n => divisions.to_vec(),
            _ => return Err(Error::InvalidRegion("one division count per axis expected".into())),
        };
        let mut step = Vec::with_capacity(n);
        let mut origin = Vec::with_capacity(n);
        for k in 0..n {
            let d = divisions[k];
            if d == 0 {
                return Err(Error::InvalidRegion("divisions must be positive".into()));
            }
            let h = (region.upper[k] - region.lower[k]) / d as f64;
            let o = -region.lower[k] / h;
            let oi = o.round();
            if (o - oi).abs() > 1e-9 || oi <= 0.0 || oi >= d as f64 {
                return Err(Error::InvalidRegion(format!(
                    "grid lines on axis {k} do not pass through the origin"
                )));
            }
            step.push(h);
            origin.push(oi as usize);
        }
        Ok(Self { n, lower: region.lower.clone(), step, cells: divisions, origin })
    }

    fn num_vertices(&self) -> usize {
        self.cells.iter().map(|c| c + 1).product()
    }

    fn flatten(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for k in (0..self.n).rev() {
            f = f * (self.cells[k] + 1) + idx[k];
        }
        f
    }

    fn unflatten(&self, mut f: usize) -> Vec<usize> {
        (0..self.n)
            .map(|k| {
                let i = f % (self.cells[k] + 1);
                f /= self.cells[k] + 1;
                i
            })
            .collect()
    }

    fn coords(&self, idx: &[usize]) -> Vec<f64> {
        (0..self.n)
            .map(|k| {
                if idx[k] == self.origin[k] {
                    0.0
                } else {
                    self.lower[k] + idx[k] as f64 * self.step[k]
                }
            })
            .collect()
    }

    /// The `n!` simplexes of one grid cell.
    fn cell_simplexes(&self, cell: &[usize], perms: &[Vec<usize>], split: KuhnSplit) -> Vec<Vec<usize>> {
        let start: Vec<usize> = (0..self.n)
            .map(|k| {
                let positive = cell[k] >= self.origin[k];
                let flip = match split {
                    // mirror per orthant, alternating the split direction across axes
                    KuhnSplit::Mirrored => positive == (k % 2 == 0),
                    KuhnSplit::Radial => positive,
                };
                if flip { 0 } else { 1 }
            })
            .collect();
        perms
            .iter()
            .map(|perm| {
                let mut bits = start.clone();
                let mut ids = Vec::with_capacity(self.n + 1);
                let corner = |bits: &[usize]| -> usize {
                    let idx: Vec<usize> = (0..self.n).map(|k| cell[k] + bits[k]).collect();
                    self.flatten(&idx)
                };
                ids.push(corner(&bits));
                for &axis in perm {
                    bits[axis] ^= 1;
                    ids.push(corner(&bits));
                }
                ids
            })
            .collect()
    }
}

/// Children of the reference Kuhn simplex under edge-midpoint subdivision,
/// given as pairs `(i, j)` meaning the midpoint of parent vertices `i` and `j`.
fn reference_children(n: usize) -> Vec<Vec<(usize, usize)>> {
    // reference simplex {1 >= y_1 >= ... >= y_n >= 0}, fine grid spacing 1/2
    let perms = permutations(n);
    let mut out = Vec::new();
    for_each_index(&vec![(0usize, 1usize); n], |cell| {
        for perm in &perms {
            let mut y: Vec<usize> = cell.to_vec(); // in units of 1/2
            let mut path = vec![y.clone()];
            for &axis in perm {
                y[axis] += 1;
                path.push(y.clone());
            }
            let mut centroid = vec![0.0; n];
            for p in &path {
                for k in 0..n {
                    centroid[k] += p[k] as f64 / (2.0 * (n + 1) as f64);
                }
            }
            let inside = centroid[0] < 1.0
                && centroid[n - 1] > 0.0
                && (0..n - 1).all(|k| centroid[k] > centroid[k + 1]);
            if !inside {
                continue;
            }
            let child = path
                .iter()
                .map(|p| {
                    // barycentric weights in halves: lambda_0 = 2 - y_1, lambda_k = y_k - y_{k+1}
                    let mut w = Vec::with_capacity(n + 1);
                    w.push(2 - p[0]);
                    for k in 0..n {
                        let next = if k + 1 < n { p[k + 1] } else { 0 };
                        w.push(p[k] - next);
                    }
                    let nz: Vec<usize> = (0..=n).filter(|&k| w[k] > 0).collect();
                    match nz.as_slice() {
                        [a] => (*a, *a),
                        [a, b] => (*a, *b),
                        _ => unreachable!("fine vertex is a vertex or edge midpoint"),
                    }
                })
                .collect();
            out.push(child);
        }
    });
    out
}

fn compute_vertex_matrix(pts: &[&[f64]]) -> std::result::Result<VertexMatrix, f64> {
    let n = pts[0].len();
    let x = DMatrix::from_fn(n, n, |j, k| pts[j + 1][k] - pts[0][k]);
    let sv = x.clone().singular_values();
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), s| (a.max(*s), b.min(*s)));
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= DEGENERACY_CONDITION) {
        return Err(cond);
    }
    let x_inv = x.clone().try_inverse().ok_or(cond)?;
    Ok(VertexMatrix { x, x_inv })
}

/// `X` with rows `x_j - x_0`, and its inverse; fails on degenerate simplexes.
pub fn vertex_matrix(pts: &[&[f64]]) -> Result<VertexMatrix> {
    compute_vertex_matrix(pts).map_err(|condition| Error::DegenerateSimplex { simplex: 0, condition })
}

fn barycentric_from(vm: &VertexMatrix, x0: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x0.len();
    let d = DVector::from_iterator(n, x.iter().zip(x0).map(|(a, b)| a - b));
    let tail = vm.x_inv.transpose() * d;
    let mut lambdas = Vec::with_capacity(n + 1);
    lambdas.push(1.0 - tail.sum());
    lambdas.extend(tail.iter());
    lambdas
}

/// Origin-anchored shape constant
/// `n ||x_j - x_0|| (max_k ||x_k - x_0|| + ||x_j - x_0||)` (2-norm).
pub fn shape_constant_origin(pts: &[&[f64]], j: usize) -> f64 {
    let n = pts[0].len() as f64;
    let dj = dist(pts[j], pts[0]);
    let dmax = pts[1..].iter().map(|p| dist(p, pts[0])).fold(0.0, f64::max);
    n * dj * (dmax + dj)
}

/// Pairwise shape constant `n max_v ||x_j - x_v||_2^2`.
pub fn shape_constant(pts: &[&[f64]], j: usize) -> f64 {
    let n = pts[0].len() as f64;
    n * pts.iter().map(|p| dist(pts[j], p).powi(2)).fold(0.0, f64::max)
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn centroid(pts: &[&[f64]]) -> Vec<f64> {
    let n = pts[0].len();
    let mut c = vec![0.0; n];
    for p in pts {
        for k in 0..n {
            c[k] += p[k] / pts.len() as f64;
        }
    }
    c
}

fn simplex_contains_origin(vertices: &[Vertex], ids: &[usize]) -> bool {
    let pts: Vec<&[f64]> = ids.iter().map(|&v| vertices[v].coords.as_slice()).collect();
    match compute_vertex_matrix(&pts) {
        Ok(vm) => barycentric_from(&vm, pts[0], &vec![0.0; pts[0].len()])
            .iter()
            .all(|l| *l >= -LOCATE_TOL),
        Err(_) => pts.iter().any(|p| p.iter().all(|c| *c == 0.0)),
    }
}

fn segments_cross(p0: &[f64], p1: &[f64], q0: &[f64], q1: &[f64]) -> bool {
    let orient = |a: &[f64], b: &[f64], c: &[f64]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let eps = 1e-14;
    let d1 = orient(q0, q1, p0);
    let d2 = orient(q0, q1, p1);
    let d3 = orient(p0, p1, q0);
    let d4 = orient(p0, p1, q1);
    ((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) && ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps))
}

fn has_duplicates(ids: &[usize]) -> bool {
    let s = sorted(ids);
    s.windows(2).any(|w| w[0] == w[1])
}

fn sorted(ids: &[usize]) -> Vec<usize> {
    let mut s = ids.to_vec();
    s.sort_unstable();
    s
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            go(prefix, rest, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut (0..n).collect(), &mut out);
    out
}

/// Visits every multi-index in the inclusive per-axis ranges, first axis fastest.
fn for_each_index(ranges: &[(usize, usize)], mut f: impl FnMut(&[usize])) {
    if ranges.iter().any(|(lo, hi)| lo > hi) {
        return;
    }
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    loop {
        f(&idx);
        let mut k = 0;
        loop {
            if k == ranges.len() {
                return;
            }
            if idx[k] < ranges[k].1 {
                idx[k] += 1;
                break;
            }
            idx[k] = ranges[k].0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri_from(points: &[[f64; 2]]) -> Triangulation {
        Triangulation::from_parts(2, points.iter().map(|p| p.to_vec()).collect(), vec![vec![0, 1, 2]], None).unwrap()
    }

    #[test]
    fn kuhn_grid_counts() {
        let t = build_kuhn_grid(&BoxRegion::cube(2, 1.0).unwrap(), &[2]).unwrap();
        assert_eq!(t.num_simplexes(), 8);
        assert_eq!(t.num_vertices(), 9);
        assert_eq!(t.simplexes().iter().filter(|s| s.contains_origin).count(), 4);

        let t = build_kuhn_grid(&BoxRegion::cube(2, 0.8).unwrap(), &[4]).unwrap();
        assert_eq!(t.num_simplexes(), 32);
        assert_eq!(t.num_vertices(), 25);

        let t = build_kuhn_grid(&BoxRegion::cube(1, 1.0).unwrap(), &[2]).unwrap();
        assert_eq!(t.num_simplexes(), 2);
        assert!(t.simplexes().iter().all(|s| s.contains_origin && t.vertex(s.vertex_ids[0]) == [0.0]));
    }

    #[test]
    fn radial_split_fans_around_origin() {
        let t = build_kuhn_grid_with(&BoxRegion::cube(2, 1.0).unwrap(), &[2], KuhnSplit::Radial).unwrap();
        assert_eq!(t.num_simplexes(), 8);
        assert_eq!(t.simplexes().iter().filter(|s| s.contains_origin).count(), 8);
        assert!(t.validate().is_valid());
        let t = build_kuhn_grid_with(&BoxRegion::cube(3, 1.0).unwrap(), &[4], KuhnSplit::Radial).unwrap();
        assert_eq!(t.simplexes().iter().filter(|s| s.contains_origin).count(), 48);
        assert!(t.validate().is_valid());
        let r = t.refine();
        assert_eq!(r.simplexes().iter().filter(|s| s.contains_origin).count(), 48);
        assert!(r.validate().is_valid());
    }

    #[test]
    fn origin_first_in_every_origin_simplex() {
        let t = build_kuhn_grid(&BoxRegion::cube(3, 1.0).unwrap(), &[2]).unwrap();
        assert_eq!(t.num_simplexes(), 8 * 6);
        for s in t.simplexes() {
            if s.contains_origin {
                assert!(t.vertex(s.vertex_ids[0]).iter().all(|c| *c == 0.0));
            }
        }
        assert!(t.validate().is_valid());
    }

    #[test]
    fn grid_rejects_box_without_origin() {
        let b = BoxRegion::new(vec![0.1, -1.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(build_kuhn_grid(&b, &[2]), Err(Error::InvalidRegion(_))));
        let b = BoxRegion::new(vec![-1.0, -1.0], vec![2.0, 1.0]).unwrap();
        // spacing 1.5 on the first axis misses the origin
        assert!(build_kuhn_grid(&b, &[2, 2]).is_err());
        assert!(build_kuhn_grid(&b, &[3, 2]).is_ok());
    }

    #[test]
    fn annulus_ring_on_sphere() {
        let b = BoxRegion::cube(2, 0.8).unwrap();
        let t = build_annulus(&b, &[4], 0.1, 16).unwrap();
        let ring = t.vertices().iter().filter(|v| (norm2(&v.coords) - 0.1).abs() <= 1e-12).count();
        assert_eq!(ring, 16);
        for s in t.simplexes() {
            assert!(!s.contains_origin);
            for &v in &s.vertex_ids {
                assert!(norm2(t.vertex(v)) >= 0.1 - 1e-12);
            }
        }
        assert!(t.validate().is_valid(), "{:?}", t.validate());
    }

    #[test]
    fn annulus_rejects_bad_radius() {
        let b = BoxRegion::cube(2, 0.8).unwrap();
        assert!(matches!(build_annulus(&b, &[4], 0.0, 16), Err(Error::InvalidRegion(_))));
        assert!(build_annulus(&b, &[4], 0.4, 16).is_err());
        assert!(build_annulus(&b, &[4], 0.1, 4).is_err());
    }

    #[test]
    fn annulus_fine_grid_and_1d() {
        let b = BoxRegion::cube(2, 0.8).unwrap();
        let t = build_annulus(&b, &[32], 0.1, 16).unwrap();
        assert!(t.validate().is_valid());
        let t1 = build_annulus(&BoxRegion::cube(1, 0.8).unwrap(), &[64], 0.1, 8).unwrap();
        assert!(t1.num_simplexes() >= 56);
        assert!(t1.validate().is_valid());
    }

    #[test]
    fn refine_quadrisects() {
        let t = build_kuhn_grid(&BoxRegion::cube(2, 1.0).unwrap(), &[2]).unwrap();
        let r = t.refine();
        assert_eq!(r.num_simplexes(), 32);
        assert_eq!(r.num_vertices(), 25);
        assert!(r.validate().is_valid());
        assert_eq!(r.simplexes().iter().filter(|s| s.contains_origin).count(), 4);
        for (sid, s) in r.simplexes().iter().enumerate() {
            if s.contains_origin {
                assert_eq!(r.vertex(s.vertex_ids[0]), [0.0, 0.0]);
            }
            let parent = sid / 4;
            for j in 0..3 {
                let cp = (0..3).map(|k| t.shape_constant(parent, k)).fold(0.0, f64::max);
                assert!(r.shape_constant(sid, j) <= 0.25 * cp + 1e-12);
            }
        }
    }

    #[test]
    fn refine_annulus_doubles_ring() {
        let b = BoxRegion::cube(2, 0.8).unwrap();
        let t = build_annulus(&b, &[4], 0.1, 16).unwrap();
        let r = t.refine();
        let ring = r.vertices().iter().filter(|v| (norm2(&v.coords) - 0.1).abs() <= 1e-12).count();
        assert_eq!(ring, 32);
        assert_eq!(r.num_simplexes(), 4 * t.num_simplexes());
        assert!(r.validate().is_valid(), "{:?}", r.validate());
        assert!(r.simplexes().iter().all(|s| !s.contains_origin));
    }

    #[test]
    fn refine_3d_is_conforming() {
        let t = build_kuhn_grid(&BoxRegion::cube(3, 1.0).unwrap(), &[2]).unwrap();
        let r = t.refine();
        assert_eq!(r.num_simplexes(), 8 * t.num_simplexes());
        assert!(r.validate().is_valid(), "{:?}", r.validate());
    }

    #[test]
    fn vertex_matrix_examples() {
        let t = tri_from(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let vm = t.vertex_matrix(0).unwrap();
        assert_eq!(vm.x, DMatrix::identity(2, 2));
        let t = tri_from(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]);
        let vm = t.vertex_matrix(0).unwrap();
        assert!((vm.x_inv.clone() - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
        let t = tri_from(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        assert!(matches!(t.vertex_matrix(0), Err(Error::DegenerateSimplex { .. })));
    }

    #[test]
    fn shape_constant_examples() {
        let unit = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let pts: Vec<&[f64]> = unit.iter().map(|p| p.as_slice()).collect();
        assert_eq!(shape_constant_origin(&pts, 0), 0.0);
        assert!((shape_constant_origin(&pts, 1) - 4.0).abs() < 1e-15);
        assert!((shape_constant(&pts, 1) - 4.0).abs() < 1e-12);
        let half = [[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]];
        let pts: Vec<&[f64]> = half.iter().map(|p| p.as_slice()).collect();
        assert!((shape_constant_origin(&pts, 2) - 1.0).abs() < 1e-15);
        let scaled: Vec<Vec<f64>> = unit.iter().map(|p| vec![3.0 * p[0], 3.0 * p[1]]).collect();
        let sp: Vec<&[f64]> = scaled.iter().map(|p| p.as_slice()).collect();
        assert!((shape_constant(&sp, 2) - 9.0 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn locate_examples() {
        let t = tri_from(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let b = t.locate(&[0.0, 1.0]).unwrap();
        assert!((b.lambdas[2] - 1.0).abs() < 1e-15 && b.lambdas[0].abs() < 1e-15);
        let b = t.locate(&[1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!(b.lambdas.iter().all(|l| (l - 1.0 / 3.0).abs() < 1e-12));
        assert!(matches!(t.locate(&[2.0, 2.0]), Err(Error::OutOfRegion(_))));
        assert!(t.locate(&[0.8, 0.8]).is_err());
    }

    #[test]
    fn locate_ties_go_to_lowest_id() {
        let t = build_kuhn_grid(&BoxRegion::cube(2, 1.0).unwrap(), &[2]).unwrap();
        let b = t.locate(&[0.0, 0.0]).unwrap();
        let first = t.simplexes().iter().position(|s| s.contains_origin).unwrap();
        assert_eq!(b.simplex_id, first);
    }

    #[test]
    fn validate_flags_corruption() {
        let good = build_kuhn_grid(&BoxRegion::cube(2, 1.0).unwrap(), &[2]).unwrap();
        assert!(good.validate().is_valid());

        let mut doc = good.to_document();
        doc.simplexes[3].verts[1] = doc.simplexes[3].verts[0];
        let bad = Triangulation::from_document(&doc).unwrap();
        assert!(bad.validate().affine_failures.contains(&3));

        let mut doc = good.to_document();
        let k = doc.simplexes.iter().position(|s| s.origin).unwrap();
        doc.simplexes[k].verts.rotate_left(1);
        let bad = Triangulation::from_document(&doc).unwrap();
        assert!(bad.validate().origin_violations.contains(&k));
    }

    #[test]
    fn validate_flags_overlap_and_gaps() {
        let good = build_kuhn_grid(&BoxRegion::cube(2, 1.0).unwrap(), &[2]).unwrap();
        let mut doc = good.to_document();
        doc.simplexes.pop();
        let holey = Triangulation::from_document(&doc).unwrap();
        // bounding box unchanged, so the missing triangle is a gap
        assert!(!holey.validate().coverage_gaps.is_empty());

        let mut doc = good.to_document();
        doc.vertices.push(vec![0.5, 0.4]);
        let v = doc.vertices.len() - 1;
        let s0 = doc.simplexes[0].verts.clone();
        doc.simplexes.push(MeshSimplex { verts: vec![s0[1], s0[2], v], origin: false });
        let overlapping = Triangulation::from_document(&doc).unwrap();
        assert!(!overlapping.validate().face_violations.is_empty());
    }

    #[test]
    fn document_round_trip() {
        let t = build_annulus(&BoxRegion::cube(2, 0.8).unwrap(), &[8], 0.1, 16).unwrap();
        let json = serde_json::to_string(&t.to_document()).unwrap();
        let back: MeshDocument = serde_json::from_str(&json).unwrap();
        let t2 = Triangulation::from_document(&back).unwrap();
        assert_eq!(t.vertices(), t2.vertices());
        assert_eq!(t.simplexes(), t2.simplexes());
        assert_eq!(t2.hole_radius(), Some(0.1));
    }
}
