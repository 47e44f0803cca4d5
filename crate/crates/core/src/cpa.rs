//! Continuous piecewise-affine functions on a [`Triangulation`].

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{GeometryError, Point, Triangulation};

#[derive(Debug, Error)]
pub enum CpaError {
    #[error("point lies outside the triangulated domain")]
    OutsideDomain,
    #[error("expected {expected} vertex values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("vertex value {0} is not finite")]
    NonFinite(usize),
    #[error("outside value must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("operation needs a planar mesh, got dimension {0}")]
    UnsupportedDimension(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which norm bounds the per-simplex gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientNorm {
    #[default]
    Euclidean,
    /// Largest absolute component.
    MaxAbs,
}

/// One piece of the zero level set inside a simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub simplex: usize,
    pub start: Point,
    pub end: Point,
}

/// A CPA function given by its vertex values, with a constant positive value
/// outside the mesh.
#[derive(Debug, Clone)]
pub struct CpaFunction<'a> {
    tri: &'a Triangulation,
    values: Vec<f64>,
    epsilon: f64,
}

impl<'a> CpaFunction<'a> {
    pub fn new(tri: &'a Triangulation, values: Vec<f64>, epsilon: f64) -> Result<Self, CpaError> {
        if values.len() != tri.vertex_count() {
            return Err(CpaError::ValueCount { expected: tri.vertex_count(), got: values.len() });
        }
        if let Some(v) = values.iter().position(|w| !w.is_finite()) {
            return Err(CpaError::NonFinite(v));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(CpaError::InvalidEpsilon(epsilon));
        }
        Ok(CpaFunction { tri, values, epsilon })
    }

    pub fn triangulation(&self) -> &'a Triangulation {
        self.tri
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Gradient of the affine piece on simplex `i`.
    pub fn gradient(&self, i: usize) -> Result<Vec<f64>, CpaError> {
        Ok(affine_gradient(self.tri, i, &self.values)?)
    }

    pub fn gradient_norm(&self, i: usize, norm: GradientNorm) -> Result<f64, CpaError> {
        let g = self.gradient(i)?;
        Ok(match norm {
            GradientNorm::Euclidean => g.iter().map(|c| c * c).sum::<f64>().sqrt(),
            GradientNorm::MaxAbs => g.iter().fold(0.0, |m, c| m.max(c.abs())),
        })
    }

    /// Largest Euclidean gradient norm over all simplices.
    pub fn gradient_norm_bound(&self) -> Result<f64, CpaError> {
        self.gradient_norm_bound_with(GradientNorm::Euclidean)
    }

    pub fn gradient_norm_bound_with(&self, norm: GradientNorm) -> Result<f64, CpaError> {
        let mut b = 0.0f64;
        for i in 0..self.tri.simplex_count() {
            b = b.max(self.gradient_norm(i, norm)?);
        }
        Ok(b)
    }

    /// Value on the mesh; points outside are an error.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, CpaError> {
        let (i, lambda) = self.tri.locate_with_weights(x).ok_or(CpaError::OutsideDomain)?;
        Ok(self.interpolate(i, lambda.weights()))
    }

    /// Value on the mesh, `epsilon` outside.
    pub fn evaluate_extended(&self, x: &[f64]) -> f64 {
        self.evaluate(x).unwrap_or(self.epsilon)
    }

    /// Combine vertex values of simplex `i` with the given weights.
    pub fn interpolate(&self, i: usize, weights: &[f64]) -> f64 {
        self.tri
            .simplex(i)
            .vertex_ids()
            .iter()
            .zip(weights)
            .map(|(&v, l)| l * self.values[v])
            .sum()
    }

    /// Simplices with a strictly negative and a strictly positive vertex.
    pub fn sign_changing_simplices(&self) -> Vec<usize> {
        (0..self.tri.simplex_count())
            .filter(|&i| {
                let ids = self.tri.simplex(i).vertex_ids();
                ids.iter().any(|&v| self.values[v] < 0.0) && ids.iter().any(|&v| self.values[v] > 0.0)
            })
            .collect()
    }

    /// Piecewise-linear zero level set, one segment per sign-changing simplex.
    ///
    /// Edge crossings are computed from the edge's endpoints in ascending id
    /// order, so adjacent simplices produce bit-identical shared endpoints.
    pub fn zero_level_set(&self) -> Result<Vec<Segment>, CpaError> {
        if self.tri.dim() != 2 {
            return Err(CpaError::UnsupportedDimension(self.tri.dim()));
        }
        let mut out = Vec::new();
        for i in self.sign_changing_simplices() {
            let ids = self.tri.simplex(i).vertex_ids();
            let mut pts: Vec<Point> = Vec::with_capacity(2);
            for &v in ids {
                if self.values[v] == 0.0 {
                    pts.push(self.tri.vertex(v).clone());
                }
            }
            for r in 0..3 {
                for s in (r + 1)..3 {
                    let (a, b) = (ids[r].min(ids[s]), ids[r].max(ids[s]));
                    let (wa, wb) = (self.values[a], self.values[b]);
                    if (wa < 0.0 && wb > 0.0) || (wa > 0.0 && wb < 0.0) {
                        pts.push(edge_crossing(self.tri.vertex(a), self.tri.vertex(b), wa, wb));
                    }
                }
            }
            if pts.len() == 2 {
                let end = pts.pop().unwrap();
                let start = pts.pop().unwrap();
                out.push(Segment { simplex: i, start, end });
            }
        }
        Ok(out)
    }

    /// Area of `{x ∈ T : W(x) ≤ 0}`.
    pub fn sublevel_region_area(&self) -> Result<f64, CpaError> {
        if self.tri.dim() != 2 {
            return Err(CpaError::UnsupportedDimension(self.tri.dim()));
        }
        let mut area = 0.0;
        for i in 0..self.tri.simplex_count() {
            area += self.sublevel_area_in(i);
        }
        Ok(area)
    }

    fn sublevel_area_in(&self, i: usize) -> f64 {
        let ids = self.tri.simplex(i).vertex_ids();
        let w: Vec<f64> = ids.iter().map(|&v| self.values[v]).collect();
        if w.iter().all(|&x| x <= 0.0) {
            return self.tri.signed_volume(i).abs();
        }
        if w.iter().all(|&x| x > 0.0) {
            return 0.0;
        }
        let mut poly: Vec<[f64; 2]> = Vec::with_capacity(4);
        for k in 0..3 {
            let (a, b) = (ids[k], ids[(k + 1) % 3]);
            let (wa, wb) = (w[k], w[(k + 1) % 3]);
            let pa = self.tri.vertex(a);
            if wa <= 0.0 {
                poly.push([pa[0], pa[1]]);
            }
            if (wa < 0.0 && wb > 0.0) || (wa > 0.0 && wb < 0.0) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let p = edge_crossing(self.tri.vertex(lo), self.tri.vertex(hi), self.values[lo], self.values[hi]);
                poly.push([p[0], p[1]]);
            }
        }
        shoelace(&poly)
    }

    /// Write `vertex_id,W` rows.
    pub fn write_values_csv(&self, path: &Path) -> Result<(), CpaError> {
        let mut out = String::from("vertex_id,W\n");
        for (v, w) in self.values.iter().enumerate() {
            out.push_str(&format!("{v},{w}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Write `simplex_id,g1..gn,norm` rows.
    pub fn write_gradients_csv(&self, path: &Path) -> Result<(), CpaError> {
        let n = self.tri.dim();
        let mut out = String::from("simplex_id");
        for k in 1..=n {
            out.push_str(&format!(",g{k}"));
        }
        out.push_str(",norm\n");
        for i in 0..self.tri.simplex_count() {
            let g = self.gradient(i)?;
            out.push_str(&i.to_string());
            for c in &g {
                out.push_str(&format!(",{c}"));
            }
            let norm = g.iter().map(|c| c * c).sum::<f64>().sqrt();
            out.push_str(&format!(",{norm}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Write `simplex_id,x_start,y_start,x_end,y_end` rows for the zero level set.
    pub fn write_boundary_csv(&self, path: &Path) -> Result<(), CpaError> {
        let mut out = String::from("simplex_id,x_start,y_start,x_end,y_end\n");
        for s in self.zero_level_set()? {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.simplex, s.start[0], s.start[1], s.end[0], s.end[1]
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Gradient of the affine interpolant of `values` on simplex `i`.
pub fn affine_gradient(tri: &Triangulation, i: usize, values: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let inv = tri.difference_inverse(i)?;
    let n = tri.dim();
    let ids = tri.simplex(i).vertex_ids();
    let w0 = values[ids[0]];
    let dw: Vec<f64> = (1..=n).map(|j| values[ids[j]] - w0).collect();
    Ok((0..n).map(|r| (0..n).map(|j| inv[r * n + j] * dw[j]).sum()).collect())
}

fn edge_crossing(a: &Point, b: &Point, wa: f64, wb: f64) -> Point {
    let t = wa / (wa - wb);
    Point(a.iter().zip(b.iter()).map(|(p, q)| p + t * (q - p)).collect())
}

fn shoelace(poly: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s.abs()
}
