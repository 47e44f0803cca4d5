//! Property suites and independent oracles shared by the test targets.
//!
//! Every suite runs on a fixed seed so failures reproduce exactly.
#![allow(dead_code)]

use std::collections::HashMap;

use cpabf::conic::{
    lmi_to_rotated_cone, rotated_cone_holds, solve, AffineExpr, ConeProgram, LinearRow, SolverSettings,
};
use cpabf::cpa::CpaFunction;
use cpabf::geometry::{delaunay_triangulate, Point, Triangulation};
use nalgebra::{Matrix3, SymmetricEigen};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const PROPERTY_CASES: u32 = 10_000;

pub fn runner(seed: u8, cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, max_global_rejects: cases * 4, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]))
}

/// A few to a few dozen scattered points in the unit square, snapped to a fine
/// lattice so duplicates are exact and easy to reject.
pub fn point_cloud() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((0u32..=1000, 0u32..=1000), 4..28).prop_filter_map("degenerate cloud", |raw| {
        let mut seen = std::collections::HashSet::new();
        let pts: Vec<Point> = raw
            .into_iter()
            .filter(|p| seen.insert(*p))
            .map(|(a, b)| Point::from([a as f64 / 1000.0, b as f64 / 1000.0]))
            .collect();
        (pts.len() >= 3).then_some(pts)
    })
}

fn mesh(pts: &[Point]) -> Result<Triangulation, TestCaseError> {
    delaunay_triangulate(pts).map_err(|e| TestCaseError::reject(e.to_string()))
}

fn diameter(tri: &Triangulation, i: usize) -> f64 {
    let ids = tri.simplex(i).vertex_ids();
    let mut d = 0.0f64;
    for a in ids {
        for b in ids {
            let (p, q) = (tri.vertex(*a), tri.vertex(*b));
            d = d.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
        }
    }
    d
}

/// Point with the given (unnormalized, positive) weights on the vertices of `i`.
fn convex_point(tri: &Triangulation, i: usize, w: [f64; 3]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    let ids = tri.simplex(i).vertex_ids();
    let mut x = vec![0.0; 2];
    for (k, &v) in ids.iter().enumerate() {
        for d in 0..2 {
            x[d] += w[k] / s * tri.vertex(v)[d];
        }
    }
    x
}

/// Located simplex and barycentric weights reconstruct the query point.
pub fn barycentric_reconstruction(seed: u8, cases: u32) -> Result<u32, String> {
    let strat = (point_cloud(), any::<prop::sample::Index>(), [0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0]);
    runner(seed, cases)
        .run(&strat, |(pts, pick, w)| {
            let tri = mesh(&pts)?;
            let x = convex_point(&tri, pick.index(tri.simplex_count()), w);
            let (i, bary) = tri.locate_with_weights(&x).ok_or_else(|| TestCaseError::fail("hull point not located"))?;
            let lam = bary.weights();
            prop_assert!((lam.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(bary.is_inside(1e-9));
            let ids = tri.simplex(i).vertex_ids();
            let mut r = [0.0f64; 2];
            for (k, &v) in ids.iter().enumerate() {
                for d in 0..2 {
                    r[d] += lam[k] * tri.vertex(v)[d];
                }
            }
            let resid = ((r[0] - x[0]).powi(2) + (r[1] - x[1]).powi(2)).sqrt();
            prop_assert!(resid <= 1e-9 * diameter(&tri, i), "residual {resid}");
            Ok(())
        })
        .map(|_| cases)
        .map_err(|e| e.to_string())
}

/// Interior edges, evaluated through either adjacent simplex, give the same value.
pub fn shared_face_continuity(seed: u8, cases: u32) -> Result<u32, String> {
    let strat = (
        point_cloud(),
        prop::collection::vec(-5.0f64..5.0, 28),
        any::<prop::sample::Index>(),
        0.0f64..=1.0,
    );
    runner(seed, cases)
        .run(&strat, |(pts, vals, pick, t)| {
            let tri = mesh(&pts)?;
            let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
            for i in 0..tri.simplex_count() {
                let ids = tri.simplex(i).vertex_ids();
                for k in 0..3 {
                    let (a, b) = (ids[k], ids[(k + 1) % 3]);
                    owners.entry((a.min(b), a.max(b))).or_default().push(i);
                }
            }
            let mut interior: Vec<_> = owners.into_iter().filter(|(_, o)| o.len() == 2).collect();
            prop_assume!(!interior.is_empty());
            interior.sort();
            let ((a, b), o) = &interior[pick.index(interior.len())];
            let (pa, pb) = (tri.vertex(*a), tri.vertex(*b));
            let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
            let w = CpaFunction::new(&tri, vals[..tri.vertex_count()].to_vec(), 0.1).unwrap();
            let via = |i: usize| {
                let bary = tri.barycentric(i, &x).unwrap();
                w.interpolate(i, bary.weights())
            };
            let (left, right) = (via(o[0]), via(o[1]));
            prop_assert!((left - right).abs() <= 1e-8, "{left} vs {right}");
            Ok(())
        })
        .map(|_| cases)
        .map_err(|e| e.to_string())
}

/// Vertex values of a planted affine map give back its gradient on every
/// simplex and its values at interior points.
pub fn planted_affine_gradient(seed: u8, cases: u32) -> Result<u32, String> {
    let strat = (point_cloud(), [-10.0f64..10.0, -10.0f64..10.0], -10.0f64..10.0, [0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0]);
    runner(seed, cases)
        .run(&strat, |(pts, a, c, wts)| {
            let tri = mesh(&pts)?;
            let f = |p: &[f64]| a[0] * p[0] + a[1] * p[1] + c;
            let vals: Vec<f64> = tri.vertices().iter().map(|p| f(p)).collect();
            let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let w = CpaFunction::new(&tri, vals, 0.1).unwrap();
            for i in 0..tri.simplex_count() {
                let g = w.gradient(i).unwrap();
                let d = diameter(&tri, i);
                // vertex residual of the recovered plane, relative to the value scale
                for &v in tri.simplex(i).vertex_ids() {
                    let p = tri.vertex(v);
                    let base = tri.vertex(tri.simplex(i).vertex_ids()[0]);
                    let pred = w.values()[tri.simplex(i).vertex_ids()[0]] + g[0] * (p[0] - base[0]) + g[1] * (p[1] - base[1]);
                    prop_assert!((pred - w.values()[v]).abs() <= 1e-9 * scale);
                }
                prop_assert!(((g[0] - a[0]).powi(2) + (g[1] - a[1]).powi(2)).sqrt() * d <= 1e-9 * scale.max(1.0) * 10.0);
                let x = convex_point(&tri, i, wts);
                let got = w.evaluate(&x).unwrap();
                prop_assert!((got - f(&x)).abs() <= 1e-9 * scale, "{got} vs {}", f(&x));
            }
            let norm = a[0].hypot(a[1]);
            prop_assert!((w.gradient_norm_bound().unwrap() - norm).abs() <= 1e-6 * norm.max(1.0));
            Ok(())
        })
        .map(|_| cases)
        .map_err(|e| e.to_string())
}

/// Repeated longest-edge bisection keeps the mesh conforming: no hanging
/// vertices, every edge on at most two triangles, area and old vertices kept.
pub fn bisection_conformity(seed: u8, cases: u32) -> Result<u32, String> {
    let strat = (point_cloud(), prop::collection::vec(any::<prop::sample::Index>(), 1..6));
    runner(seed, cases)
        .run(&strat, |(pts, picks)| {
            let mut tri = mesh(&pts)?;
            let area = tri.total_volume();
            let before: Vec<Point> = tri.vertices().to_vec();
            for pick in picks {
                let i = pick.index(tri.simplex_count());
                let (a, b) = tri.longest_edge(i);
                let mid = tri.vertex(a).midpoint(tri.vertex(b));
                let count = tri.simplex_count();
                let cut = tri.bisect_longest_edge(i).unwrap();
                prop_assert_eq!(cut.midpoint.coords(), mid.coords());
                let grown = tri.simplex_count() - count;
                prop_assert!(grown == 1 || grown == 2);
                prop_assert!(conforming(&tri).is_ok(), "{:?}", conforming(&tri));
            }
            prop_assert!((tri.total_volume() - area).abs() <= 1e-12 * area.max(1.0));
            prop_assert_eq!(&tri.vertices()[..before.len()], &before[..]);
            Ok(())
        })
        .map(|_| cases)
        .map_err(|e| e.to_string())
}

/// Independent conformity audit used by the bisection suite.
pub fn conforming(tri: &Triangulation) -> Result<(), String> {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for i in 0..tri.simplex_count() {
        let ids = tri.simplex(i).vertex_ids();
        let (p, q, r) = (tri.vertex(ids[0]), tri.vertex(ids[1]), tri.vertex(ids[2]));
        let det = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
        if det <= 0.0 {
            return Err(format!("simplex {i} not positively oriented"));
        }
        for k in 0..3 {
            let (a, b) = (ids[k], ids[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    for (&(a, b), &c) in &count {
        if c > 2 {
            return Err(format!("edge {a}-{b} on {c} triangles"));
        }
        let (p, q) = (tri.vertex(a), tri.vertex(b));
        for (v, x) in tri.vertices().iter().enumerate() {
            if v == a || v == b {
                continue;
            }
            let cross = (q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0]);
            let along = (x[0] - p[0]) * (q[0] - p[0]) + (x[1] - p[1]) * (q[1] - p[1]);
            let len2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if cross.abs() <= 1e-12 * len2 && along > 1e-12 * len2 && along < len2 * (1.0 - 1e-12) {
                return Err(format!("vertex {v} hangs on edge {a}-{b}"));
            }
        }
    }
    Ok(())
}

/// Largest eigenvalue of `M − θI` by a direct symmetric eigen solve.
pub fn lmi_max_eigen(a: f64, v: [f64; 2], theta: f64) -> f64 {
    let m = Matrix3::new(a - theta, v[0], v[1], v[0], -2.0 - theta, 0.0, v[1], 0.0, -2.0 - theta);
    SymmetricEigen::new(m).eigenvalues.max()
}

/// Random `(a, v, θ)` triples: cone membership must match the eigenvalue
/// sign whenever the eigenvalue is more than `tol` away from zero. Returns
/// the number of disagreements.
pub fn cone_vs_eigen(seed: u64, triples: usize, tol: f64) -> usize {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..triples {
        let a = rng.gen_range(-3.0..3.0);
        let v = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let theta = rng.gen_range(0.0..4.0);
        let lam = lmi_max_eigen(a, v, theta);
        if lam.abs() <= tol {
            continue;
        }
        if rotated_cone_holds(a, v, theta, 0.0) != (lam < 0.0) {
            bad += 1;
        }
    }
    bad
}

/// Smallest `θ ≥ 0` with `M ⪯ θI` for `a = 0`, `v = (1, 0)`, from the solver.
pub fn canonical_theta() -> f64 {
    let mut p = ConeProgram::new();
    let t = p.add_var("theta");
    let (cone, rows) =
        lmi_to_rotated_cone(&AffineExpr::constant(0.0), [&AffineExpr::constant(1.0), &AffineExpr::constant(0.0)], &AffineExpr::var(t));
    p.add_cone(cone);
    for r in &rows {
        p.add_row(LinearRow::nonneg(r));
    }
    p.add_row(LinearRow::nonneg(&AffineExpr::var(t)));
    p.objective = vec![(t, 1.0)];
    solve(&p, &SolverSettings::default()).expect("canonical instance solves").x[t]
}
