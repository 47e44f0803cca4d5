//! Simplicial meshes over sampled states.
//!
//! A [`Triangulation`] stores vertex coordinates, simplices as vertex-index
//! tuples, facet adjacency and a cached inverse of each simplex's
//! vertex-difference matrix. The same inverse serves barycentric coordinates
//! (`λ = X⁻ᵀ (x − x₀)`) and CPA gradients (`∇W = X⁻¹ ΔW`).
//!
//! Planar meshes are built with Bowyer–Watson insertion on exact predicates.
//! Refinement is conforming longest-edge bisection.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::ops::Deref;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use robust::Coord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default absolute tolerance on barycentric membership tests.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Simplices whose difference matrix has a 1-norm condition number above
/// this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("all input points are affinely dependent")]
    DegenerateInput,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("unsupported state dimension {0}")]
    UnsupportedDimension(usize),
    #[error("points {first} and {second} coincide")]
    DuplicatePoint { first: usize, second: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("expected a point of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("simplex {0} is numerically singular")]
    SingularSimplex(usize),
    #[error("simplex index {0} out of range")]
    NoSuchSimplex(usize),
    #[error("invalid triangulation: {0}")]
    InvalidMesh(String),
    #[error("mesh file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A state-space point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn midpoint(&self, other: &Point) -> Point {
        Point(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        )
    }
}

impl Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(v: [f64; N]) -> Self {
        Point(v.to_vec())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Vertex-index tuple of an n-simplex (n + 1 entries).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Simplex(pub Vec<usize>);

impl Simplex {
    pub fn vertex_ids(&self) -> &[usize] {
        &self.0
    }

    pub fn contains_vertex(&self, v: usize) -> bool {
        self.0.contains(&v)
    }
}

/// Barycentric weights of a point with respect to one simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricCoords(pub Vec<f64>);

impl BarycentricCoords {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn is_inside(&self, tol: f64) -> bool {
        self.0.iter().all(|&l| l >= -tol)
    }

    pub fn min_weight(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Result of one conforming edge bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct Bisection {
    /// Id of the inserted midpoint vertex.
    pub vertex: usize,
    pub midpoint: Point,
    /// The bisected edge, smaller vertex id first.
    pub edge: (usize, usize),
    /// `(parent, new_child)`: the parent index keeps one half, the other
    /// half is appended under `new_child`.
    pub splits: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct Frame {
    /// Row-major inverse of the matrix with rows `x_j − x_0`, or `None` when singular.
    inverse: Option<Vec<f64>>,
}

/// A conforming simplicial mesh.
#[derive(Debug)]
pub struct Triangulation {
    dim: usize,
    vertices: Vec<Point>,
    simplices: Vec<Simplex>,
    neighbors: Vec<Vec<Option<usize>>>,
    stars: Vec<Vec<usize>>,
    frames: Vec<Frame>,
    tolerance: f64,
    hint: AtomicUsize,
}

impl Clone for Triangulation {
    fn clone(&self) -> Self {
        Triangulation {
            dim: self.dim,
            vertices: self.vertices.clone(),
            simplices: self.simplices.clone(),
            neighbors: self.neighbors.clone(),
            stars: self.stars.clone(),
            frames: self.frames.clone(),
            tolerance: self.tolerance,
            hint: AtomicUsize::new(self.hint.load(Ordering::Relaxed)),
        }
    }
}

impl Triangulation {
    /// Assemble a mesh from explicit vertices and simplices.
    ///
    /// Simplices are reoriented to positive signed volume. Adjacency, vertex
    /// stars and per-simplex inverses are computed here.
    pub fn from_parts(vertices: Vec<Point>, simplices: Vec<Simplex>) -> Result<Self, GeometryError> {
        let dim = vertices.first().map(Point::dim).ok_or(GeometryError::TooFewPoints {
            needed: 1,
            got: 0,
        })?;
        if dim == 0 {
            return Err(GeometryError::UnsupportedDimension(0));
        }
        for (k, p) in vertices.iter().enumerate() {
            if p.dim() != dim {
                return Err(GeometryError::DimensionMismatch { expected: dim, got: p.dim() });
            }
            if !p.is_finite() {
                return Err(GeometryError::NonFinite(k));
            }
        }
        let mut tri = Triangulation {
            dim,
            vertices,
            simplices: Vec::with_capacity(simplices.len()),
            neighbors: Vec::new(),
            stars: Vec::new(),
            frames: Vec::new(),
            tolerance: DEFAULT_TOLERANCE,
            hint: AtomicUsize::new(0),
        };
        for (i, mut s) in simplices.into_iter().enumerate() {
            if s.0.len() != dim + 1 {
                return Err(GeometryError::InvalidMesh(format!(
                    "simplex {i} has {} vertices, expected {}",
                    s.0.len(),
                    dim + 1
                )));
            }
            let distinct: BTreeSet<usize> = s.0.iter().copied().collect();
            if distinct.len() != s.0.len() || s.0.iter().any(|&v| v >= tri.vertices.len()) {
                return Err(GeometryError::InvalidMesh(format!("simplex {i} has bad vertex ids")));
            }
            if tri.raw_signed_volume(&s) < 0.0 {
                s.0.swap(0, 1);
            }
            tri.simplices.push(s);
        }
        tri.frames = (0..tri.simplices.len()).map(|i| tri.compute_frame(i)).collect();
        if let Some(i) = tri.frames.iter().position(|f| f.inverse.is_none()) {
            return Err(GeometryError::SingularSimplex(i));
        }
        tri.rebuild_topology();
        Ok(tri)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn simplex_count(&self) -> usize {
        self.simplices.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> &Point {
        &self.vertices[v]
    }

    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    pub fn simplex(&self, i: usize) -> &Simplex {
        &self.simplices[i]
    }

    /// Neighbor across the facet opposite local vertex `k`, per simplex.
    pub fn neighbors(&self, i: usize) -> &[Option<usize>] {
        &self.neighbors[i]
    }

    /// Simplices incident to vertex `v`, ascending.
    pub fn simplices_of_vertex(&self, v: usize) -> &[usize] {
        &self.stars[v]
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn set_tolerance(&mut self, tol: f64) {
        self.tolerance = tol;
    }

    /// Row-major `X_i⁻¹` where row `j` of `X_i` is `x_{i,j+1} − x_{i,0}`.
    pub fn difference_inverse(&self, i: usize) -> Result<&[f64], GeometryError> {
        let frame = self.frames.get(i).ok_or(GeometryError::NoSuchSimplex(i))?;
        frame.inverse.as_deref().ok_or(GeometryError::SingularSimplex(i))
    }

    pub fn barycentric(&self, i: usize, x: &[f64]) -> Result<BarycentricCoords, GeometryError> {
        if x.len() != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let inv = self.difference_inverse(i)?;
        let n = self.dim;
        let origin = &self.vertices[self.simplices[i].0[0]];
        let d: Vec<f64> = x.iter().zip(origin.iter()).map(|(a, b)| a - b).collect();
        let mut lambda = vec![0.0; n + 1];
        let mut rest = 0.0;
        for j in 0..n {
            let l: f64 = (0..n).map(|k| inv[k * n + j] * d[k]).sum();
            lambda[j + 1] = l;
            rest += l;
        }
        lambda[0] = 1.0 - rest;
        Ok(BarycentricCoords(lambda))
    }

    fn contains(&self, i: usize, x: &[f64]) -> bool {
        self.barycentric(i, x).map(|b| b.is_inside(self.tolerance)).unwrap_or(false)
    }

    /// Index of a simplex containing `x`, lowest index on shared faces.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim || self.simplices.is_empty() {
            return None;
        }
        let found = self.walk(x).or_else(|| (0..self.simplices.len()).find(|&i| self.contains(i, x)))?;
        self.hint.store(found, Ordering::Relaxed);
        let mut best = found;
        for &v in &self.simplices[found].0 {
            for &s in &self.stars[v] {
                if s < best && self.contains(s, x) {
                    best = s;
                }
            }
        }
        Some(best)
    }

    /// Locate and return barycentric coordinates in one call.
    pub fn locate_with_weights(&self, x: &[f64]) -> Option<(usize, BarycentricCoords)> {
        let i = self.locate(x)?;
        self.barycentric(i, x).ok().map(|b| (i, b))
    }

    fn walk(&self, x: &[f64]) -> Option<usize> {
        let mut current = self.hint.load(Ordering::Relaxed).min(self.simplices.len() - 1);
        for _ in 0..self.simplices.len() {
            let bary = self.barycentric(current, x).ok()?;
            let (k, &worst) = bary
                .0
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("simplex has vertices");
            if worst >= -self.tolerance {
                return Some(current);
            }
            current = self.neighbors[current][k]?;
        }
        None
    }

    /// Maximum pairwise Euclidean distance among the simplex's vertices,
    /// stacked with per-vertex inputs when given.
    pub fn simplex_diameter(&self, i: usize, inputs: Option<&[Vec<f64>]>) -> f64 {
        let ids = &self.simplices[i].0;
        let mut best = 0.0f64;
        for r in 0..ids.len() {
            for s in (r + 1)..ids.len() {
                let mut d2 = squared_distance(&self.vertices[ids[r]], &self.vertices[ids[s]]);
                if let Some(u) = inputs {
                    d2 += squared_distance(&u[r], &u[s]);
                }
                best = best.max(d2);
            }
        }
        best.sqrt()
    }

    /// Longest edge of simplex `i`; ties go to the lexicographically smallest
    /// sorted vertex pair.
    pub fn longest_edge(&self, i: usize) -> (usize, usize) {
        let ids = &self.simplices[i].0;
        let mut best: Option<(f64, (usize, usize))> = None;
        for r in 0..ids.len() {
            for s in (r + 1)..ids.len() {
                let e = (ids[r].min(ids[s]), ids[r].max(ids[s]));
                let len = squared_distance(&self.vertices[e.0], &self.vertices[e.1]);
                best = match best {
                    Some((l, be)) if l > len || (l == len && be < e) => Some((l, be)),
                    _ => Some((len, e)),
                };
            }
        }
        best.expect("simplex has an edge").1
    }

    /// Bisect the longest edge of simplex `i`, splitting every simplex that
    /// shares the edge.
    pub fn bisect_longest_edge(&mut self, i: usize) -> Result<Bisection, GeometryError> {
        if i >= self.simplices.len() {
            return Err(GeometryError::NoSuchSimplex(i));
        }
        let (a, b) = self.longest_edge(i);
        self.bisect_edge(a, b)
    }

    /// Insert the midpoint of edge `(a, b)` and split all simplices on it.
    pub fn bisect_edge(&mut self, a: usize, b: usize) -> Result<Bisection, GeometryError> {
        let (a, b) = (a.min(b), a.max(b));
        let sharing: Vec<usize> = self
            .stars
            .get(a)
            .ok_or_else(|| GeometryError::InvalidMesh(format!("no vertex {a}")))?
            .iter()
            .copied()
            .filter(|&s| self.simplices[s].contains_vertex(b))
            .collect();
        if sharing.is_empty() {
            return Err(GeometryError::InvalidMesh(format!("({a}, {b}) is not an edge")));
        }
        let midpoint = self.vertices[a].midpoint(&self.vertices[b]);
        let m = self.vertices.len();
        self.vertices.push(midpoint.clone());
        let mut splits = Vec::with_capacity(sharing.len());
        for &s in &sharing {
            let mut child = self.simplices[s].clone();
            for v in child.0.iter_mut() {
                if *v == a {
                    *v = m;
                }
            }
            for v in self.simplices[s].0.iter_mut() {
                if *v == b {
                    *v = m;
                }
            }
            let c = self.simplices.len();
            self.simplices.push(child);
            self.frames.push(Frame { inverse: None });
            self.frames[s] = self.compute_frame(s);
            self.frames[c] = self.compute_frame(c);
            if self.frames[s].inverse.is_none() {
                return Err(GeometryError::SingularSimplex(s));
            }
            if self.frames[c].inverse.is_none() {
                return Err(GeometryError::SingularSimplex(c));
            }
            splits.push((s, c));
        }
        self.rebuild_topology();
        Ok(Bisection { vertex: m, midpoint, edge: (a, b), splits })
    }

    /// Signed volume; positive for every simplex of a valid mesh.
    pub fn signed_volume(&self, i: usize) -> f64 {
        self.raw_signed_volume(&self.simplices[i])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.simplices.len()).map(|i| self.signed_volume(i).abs()).sum()
    }

    /// All distinct edges as sorted vertex pairs.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for s in &self.simplices {
            for r in 0..s.0.len() {
                for q in (r + 1)..s.0.len() {
                    out.insert((s.0[r].min(s.0[q]), s.0[r].max(s.0[q])));
                }
            }
        }
        out
    }

    /// Axis-aligned bounds of the vertex set.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in &self.vertices {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Structural audit: positive orientation, facet manifoldness, every
    /// vertex used, and no vertex inside a simplex it does not belong to.
    pub fn validate(&self) -> Result<(), GeometryError> {
        for i in 0..self.simplices.len() {
            if self.signed_volume(i) <= 0.0 {
                return Err(GeometryError::InvalidMesh(format!("simplex {i} is inverted or flat")));
            }
        }
        let mut facets: HashMap<Vec<usize>, usize> = HashMap::new();
        for s in &self.simplices {
            for k in 0..s.0.len() {
                *facets.entry(facet_key(&s.0, k)).or_default() += 1;
            }
        }
        if let Some((f, c)) = facets.iter().find(|(_, &c)| c > 2) {
            return Err(GeometryError::InvalidMesh(format!("facet {f:?} shared by {c} simplices")));
        }
        for (v, star) in self.stars.iter().enumerate() {
            if star.is_empty() {
                return Err(GeometryError::InvalidMesh(format!("vertex {v} belongs to no simplex")));
            }
        }
        for (v, p) in self.vertices.iter().enumerate() {
            for (i, s) in self.simplices.iter().enumerate() {
                if s.contains_vertex(v) {
                    continue;
                }
                if self.contains(i, p) {
                    return Err(GeometryError::InvalidMesh(format!(
                        "vertex {v} lies in simplex {i} without being one of its vertices"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Write `vertices.csv` (id, x1..xn) and `simplices.csv` (id, v0..vn).
    pub fn write_csv(&self, dir: &Path) -> Result<(), GeometryError> {
        let mut out = String::new();
        out.push_str("id");
        for k in 1..=self.dim {
            out.push_str(&format!(",x{k}"));
        }
        out.push('\n');
        for (id, p) in self.vertices.iter().enumerate() {
            out.push_str(&id.to_string());
            for c in p.iter() {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        fs::write(dir.join("vertices.csv"), out)?;
        let mut out = String::from("id");
        for k in 0..=self.dim {
            out.push_str(&format!(",v{k}"));
        }
        out.push('\n');
        for (id, s) in self.simplices.iter().enumerate() {
            out.push_str(&id.to_string());
            for v in &s.0 {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        fs::write(dir.join("simplices.csv"), out)?;
        Ok(())
    }

    /// Read a mesh written by [`Triangulation::write_csv`].
    pub fn read_csv(dir: &Path) -> Result<Self, GeometryError> {
        let vertices = read_rows(&dir.join("vertices.csv"))?
            .into_iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.parse::<f64>().map_err(|e| GeometryError::Format(format!("{c}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Point)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let simplices = read_rows(&dir.join("simplices.csv"))?
            .into_iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.parse::<usize>().map_err(|e| GeometryError::Format(format!("{c}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Simplex)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Triangulation::from_parts(vertices, simplices)
    }

    fn raw_signed_volume(&self, s: &Simplex) -> f64 {
        let n = self.dim;
        let origin = &self.vertices[s.0[0]];
        let mut m = Vec::with_capacity(n * n);
        for j in 1..=n {
            let p = &self.vertices[s.0[j]];
            for k in 0..n {
                m.push(p[k] - origin[k]);
            }
        }
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        determinant(&mut m, n) / fact
    }

    fn compute_frame(&self, i: usize) -> Frame {
        let n = self.dim;
        let s = &self.simplices[i];
        let origin = &self.vertices[s.0[0]];
        let mut m = Vec::with_capacity(n * n);
        for j in 1..=n {
            let p = &self.vertices[s.0[j]];
            for k in 0..n {
                m.push(p[k] - origin[k]);
            }
        }
        let inverse = invert(&m, n).filter(|inv| norm1(&m, n) * norm1(inv, n) <= SINGULAR_CONDITION);
        Frame { inverse }
    }

    fn rebuild_topology(&mut self) {
        let mut stars = vec![Vec::new(); self.vertices.len()];
        for (i, s) in self.simplices.iter().enumerate() {
            for &v in &s.0 {
                stars[v].push(i);
            }
        }
        let mut facets: HashMap<Vec<usize>, Vec<(usize, usize)>> = HashMap::new();
        for (i, s) in self.simplices.iter().enumerate() {
            for k in 0..s.0.len() {
                facets.entry(facet_key(&s.0, k)).or_default().push((i, k));
            }
        }
        let mut neighbors: Vec<Vec<Option<usize>>> =
            self.simplices.iter().map(|s| vec![None; s.0.len()]).collect();
        for owners in facets.values() {
            if let [(i, ki), (j, kj)] = owners[..] {
                neighbors[i][ki] = Some(j);
                neighbors[j][kj] = Some(i);
            }
        }
        self.stars = stars;
        self.neighbors = neighbors;
    }
}

fn facet_key(ids: &[usize], skip: usize) -> Vec<usize> {
    let mut f: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != skip)
        .map(|(_, &v)| v)
        .collect();
    f.sort_unstable();
    f
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>, GeometryError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    lines
        .next()
        .ok_or_else(|| GeometryError::Format(format!("{}: missing header", path.display())))?;
    Ok(lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').skip(1).map(|c| c.trim().to_string()).collect())
        .collect())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm1(m: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|c| (0..n).map(|r| m[r * n + c].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn determinant(m: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a * n + col].abs().total_cmp(&m[b * n + col].abs()))
            .unwrap();
        if m[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(pivot * n + k, col * n + k);
            }
            det = -det;
        }
        let p = m[col * n + col];
        det *= p;
        for r in (col + 1)..n {
            let f = m[r * n + col] / p;
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
        }
    }
    det
}

/// Gauss–Jordan inverse with partial pivoting.
pub(crate) fn invert(m: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut a = m.to_vec();
    let mut inv = vec![0.0; n * n];
    for k in 0..n {
        inv[k * n + k] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[pivot * n + col] == 0.0 || !a[pivot * n + col].is_finite() {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
                inv.swap(pivot * n + k, col * n + k);
            }
        }
        let p = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f != 0.0 {
                for k in 0..n {
                    a[r * n + k] -= f * a[col * n + k];
                    inv[r * n + k] -= f * inv[col * n + k];
                }
            }
        }
    }
    Some(inv)
}

const GHOST: usize = usize::MAX;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
struct BwTriangle {
    /// Counter-clockwise; a ghost triangle stores [a, b, GHOST] with the
    /// outside of hull edge a→b on its left.
    v: [usize; 3],
    /// Neighbor opposite `v[k]`.
    nbr: [usize; 3],
    alive: bool,
}

impl BwTriangle {
    fn is_ghost(&self) -> bool {
        self.v[2] == GHOST
    }
}

struct BowyerWatson<'a> {
    pts: &'a [Point],
    tris: Vec<BwTriangle>,
    last: usize,
}

fn coord(p: &Point) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

impl<'a> BowyerWatson<'a> {
    fn orient(&self, a: usize, b: usize, c: usize) -> f64 {
        robust::orient2d(coord(&self.pts[a]), coord(&self.pts[b]), coord(&self.pts[c]))
    }

    /// Strictly between a and b, given that a, b, p are collinear.
    fn strictly_between(&self, a: usize, b: usize, p: usize) -> bool {
        let (pa, pb, pp) = (&self.pts[a], &self.pts[b], &self.pts[p]);
        let dot = (pp[0] - pa[0]) * (pb[0] - pa[0]) + (pp[1] - pa[1]) * (pb[1] - pa[1]);
        let len = (pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2);
        dot > 0.0 && dot < len
    }

    fn in_circle(&self, t: usize, p: usize) -> bool {
        let tri = &self.tris[t];
        let [a, b, c] = tri.v;
        if tri.is_ghost() {
            let o = self.orient(a, b, p);
            o > 0.0 || (o == 0.0 && self.strictly_between(a, b, p))
        } else {
            robust::incircle(
                coord(&self.pts[a]),
                coord(&self.pts[b]),
                coord(&self.pts[c]),
                coord(&self.pts[p]),
            ) > 0.0
        }
    }

    fn push(&mut self, v: [usize; 3]) -> usize {
        let v = match v.iter().position(|&x| x == GHOST) {
            Some(0) => [v[1], v[2], v[0]],
            Some(1) => [v[2], v[0], v[1]],
            _ => v,
        };
        self.tris.push(BwTriangle { v, nbr: [NONE; 3], alive: true });
        self.tris.len() - 1
    }

    fn link(&mut self, ids: &[usize]) {
        let mut open: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for &t in ids {
            for k in 0..3 {
                let e = (self.tris[t].v[(k + 1) % 3], self.tris[t].v[(k + 2) % 3]);
                if let Some((o, ko)) = open.remove(&(e.1, e.0)) {
                    self.tris[t].nbr[k] = o;
                    self.tris[o].nbr[ko] = t;
                } else {
                    open.insert(e, (t, k));
                }
            }
        }
    }

    fn find_seed(&self, p: usize) -> Option<usize> {
        let mut t = self.last;
        for _ in 0..self.tris.len() {
            let tri = &self.tris[t];
            if !tri.alive {
                break;
            }
            if tri.is_ghost() {
                return self.in_circle(t, p).then_some(t);
            }
            let mut moved = false;
            for k in 0..3 {
                let (a, b) = (tri.v[(k + 1) % 3], tri.v[(k + 2) % 3]);
                if self.orient(a, b, p) < 0.0 {
                    t = tri.nbr[k];
                    moved = true;
                    break;
                }
            }
            if !moved {
                return self.in_circle(t, p).then_some(t);
            }
        }
        (0..self.tris.len()).find(|&t| self.tris[t].alive && self.in_circle(t, p))
    }

    fn insert(&mut self, p: usize) -> Result<(), GeometryError> {
        let seed = self
            .find_seed(p)
            .or_else(|| (0..self.tris.len()).find(|&t| self.tris[t].alive && self.in_circle(t, p)))
            .ok_or_else(|| GeometryError::InvalidMesh(format!("no cavity for point {p}")))?;
        let mut cavity = vec![seed];
        let mut in_cavity: HashMap<usize, bool> = HashMap::new();
        in_cavity.insert(seed, true);
        let mut head = 0;
        while head < cavity.len() {
            let t = cavity[head];
            head += 1;
            for k in 0..3 {
                let nb = self.tris[t].nbr[k];
                if nb == NONE || in_cavity.contains_key(&nb) {
                    continue;
                }
                let inside = self.in_circle(nb, p);
                in_cavity.insert(nb, inside);
                if inside {
                    cavity.push(nb);
                }
            }
        }
        let mut boundary = Vec::new();
        for &t in &cavity {
            for k in 0..3 {
                let nb = self.tris[t].nbr[k];
                if !in_cavity.get(&nb).copied().unwrap_or(false) {
                    let tri = &self.tris[t];
                    boundary.push((tri.v[(k + 1) % 3], tri.v[(k + 2) % 3], nb));
                }
            }
        }
        for &t in &cavity {
            self.tris[t].alive = false;
        }
        let mut created = Vec::with_capacity(boundary.len());
        for (a, b, outer) in boundary {
            if a != GHOST && b != GHOST && self.orient(a, b, p) <= 0.0 {
                return Err(GeometryError::InvalidMesh(format!(
                    "degenerate triangle ({a}, {b}, {p}) during insertion"
                )));
            }
            let t = self.push([a, b, p]);
            let tri = &self.tris[t];
            let k = tri.v.iter().position(|&x| x == p).expect("new vertex present");
            self.tris[t].nbr[k] = outer;
            if outer != NONE {
                let ko = (0..3)
                    .find(|&ko| {
                        let o = &self.tris[outer];
                        let e = (o.v[(ko + 1) % 3], o.v[(ko + 2) % 3]);
                        e == (b, a)
                    })
                    .expect("outer triangle shares the boundary edge");
                self.tris[outer].nbr[ko] = t;
            }
            created.push(t);
        }
        self.link(&created);
        self.last = created
            .iter()
            .copied()
            .find(|&t| !self.tris[t].is_ghost())
            .unwrap_or(created[0]);
        Ok(())
    }
}

/// Delaunay triangulation of planar points (Bowyer–Watson, exact predicates,
/// insertion in index order, strict incircle test).
pub fn delaunay_triangulate(points: &[Point]) -> Result<Triangulation, GeometryError> {
    let dim = points.first().map(Point::dim).unwrap_or(2);
    if dim != 2 {
        return Err(GeometryError::UnsupportedDimension(dim));
    }
    if points.len() < dim + 1 {
        return Err(GeometryError::TooFewPoints { needed: dim + 1, got: points.len() });
    }
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    for (k, p) in points.iter().enumerate() {
        if p.dim() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: p.dim() });
        }
        if !p.is_finite() {
            return Err(GeometryError::NonFinite(k));
        }
        // +0.0 and -0.0 compare equal but differ in bits
        let key = ((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits());
        if let Some(&first) = seen.get(&key) {
            return Err(GeometryError::DuplicatePoint { first, second: k });
        }
        seen.insert(key, k);
    }

    let mut bw = BowyerWatson { pts: points, tris: Vec::new(), last: 0 };
    let a = 0;
    let b = 1;
    let c = (2..points.len())
        .find(|&c| bw.orient(a, b, c) != 0.0)
        .ok_or(GeometryError::DegenerateInput)?;
    let (a, b) = if bw.orient(a, b, c) > 0.0 { (a, b) } else { (b, a) };
    let t0 = bw.push([a, b, c]);
    let g0 = bw.push([b, a, GHOST]);
    let g1 = bw.push([c, b, GHOST]);
    let g2 = bw.push([a, c, GHOST]);
    bw.link(&[t0, g0, g1, g2]);
    bw.last = t0;
    for p in 0..points.len() {
        if p == a || p == b || p == c {
            continue;
        }
        bw.insert(p)?;
    }
    let simplices = bw
        .tris
        .iter()
        .filter(|t| t.alive && !t.is_ghost())
        .map(|t| Simplex(t.v.to_vec()))
        .collect();
    Triangulation::from_parts(points.to_vec(), simplices)
}
