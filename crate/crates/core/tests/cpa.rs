use cpabf::cpa::{CpaError, CpaFunction, GradientNorm};
use cpabf::geometry::{delaunay_triangulate, Point, Simplex, Triangulation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_triangle() -> Triangulation {
    Triangulation::from_parts(
        vec![Point::from([0.0, 0.0]), Point::from([1.0, 0.0]), Point::from([0.0, 1.0])],
        vec![Simplex(vec![0, 1, 2])],
    )
    .unwrap()
}

fn random_mesh(rng: &mut ChaCha8Rng, n: usize) -> Triangulation {
    let pts: Vec<Point> = (0..n).map(|_| Point::from([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])).collect();
    delaunay_triangulate(&pts).unwrap()
}

#[test]
fn gradient_examples() {
    let tri = unit_triangle();
    let w = CpaFunction::new(&tri, vec![0.0, 1.0, 0.0], 0.1).unwrap();
    assert_eq!(w.gradient(0).unwrap(), vec![1.0, 0.0]);
    let c = CpaFunction::new(&tri, vec![2.0; 3], 0.1).unwrap();
    assert_eq!(c.gradient(0).unwrap(), vec![0.0, 0.0]);
    assert_eq!(c.gradient_norm_bound().unwrap(), 0.0);
}

#[test]
fn evaluation_examples() {
    let tri = unit_triangle();
    let w = CpaFunction::new(&tri, vec![-1.0, 3.0, 0.5], 0.1).unwrap();
    assert_eq!(w.evaluate(&[1.0, 0.0]).unwrap(), 3.0);
    assert!((w.evaluate(&[0.5, 0.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!(matches!(w.evaluate(&[2.0, 2.0]), Err(CpaError::OutsideDomain)));
    assert_eq!(w.evaluate_extended(&[2.0, 2.0]), 0.1);
}

#[test]
fn constructor_rejects_bad_input() {
    let tri = unit_triangle();
    assert!(matches!(CpaFunction::new(&tri, vec![0.0; 2], 0.1), Err(CpaError::ValueCount { .. })));
    assert!(matches!(CpaFunction::new(&tri, vec![0.0, f64::NAN, 0.0], 0.1), Err(CpaError::NonFinite(_))));
    assert!(matches!(CpaFunction::new(&tri, vec![0.0; 3], 0.0), Err(CpaError::InvalidEpsilon(_))));
}

#[test]
fn gradient_bound_is_the_largest_simplex_norm() {
    let tri = Triangulation::from_parts(
        vec![Point::from([0.0, 0.0]), Point::from([1.0, 0.0]), Point::from([0.0, 1.0]), Point::from([1.0, 1.0])],
        vec![Simplex(vec![0, 1, 2]), Simplex(vec![1, 3, 2])],
    )
    .unwrap();
    let w = CpaFunction::new(&tri, vec![0.0, 2.0, -1.0, 4.0], 0.1).unwrap();
    // per-simplex planes solved by hand: (2, -1) and (5, 2)
    let brute = 5f64.sqrt().max(29f64.sqrt());
    assert!((w.gradient_norm_bound().unwrap() - brute).abs() < 1e-12);
    assert!((w.gradient_norm_bound_with(GradientNorm::MaxAbs).unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn level_set_endpoints_are_zeros_and_shared() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let tri = random_mesh(&mut rng, 40);
        let vals: Vec<f64> = (0..tri.vertex_count()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let w = CpaFunction::new(&tri, vals, 0.1).unwrap();
        let segs = w.zero_level_set().unwrap();
        assert_eq!(segs.len(), w.sign_changing_simplices().len());
        let mut ends = std::collections::HashMap::new();
        for s in &segs {
            for p in [&s.start, &s.end] {
                let b = tri.barycentric(s.simplex, p).unwrap();
                assert!(w.interpolate(s.simplex, b.weights()).abs() <= 1e-9 * scale);
                let key = (p[0].to_bits(), p[1].to_bits());
                *ends.entry(key).or_insert(0) += 1;
            }
        }
        // a crossing on an interior edge belongs to both neighbours' segments
        assert!(ends.values().all(|&c| c <= 2));
    }
}

#[test]
fn sub_and_superlevel_areas_partition_the_mesh() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let tri = random_mesh(&mut rng, 30);
        let vals: Vec<f64> = (0..tri.vertex_count()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let neg: Vec<f64> = vals.iter().map(|v| -v).collect();
        let below = CpaFunction::new(&tri, vals, 0.1).unwrap().sublevel_region_area().unwrap();
        let above = CpaFunction::new(&tri, neg, 0.1).unwrap().sublevel_region_area().unwrap();
        let total = tri.total_volume();
        assert!((below + above - total).abs() <= 1e-9 * total, "{below} + {above} vs {total}");
    }
}

#[test]
fn csv_exports_have_expected_headers() {
    let dir = tempfile::tempdir().unwrap();
    let tri = unit_triangle();
    let w = CpaFunction::new(&tri, vec![-1.0, 1.0, 1.0], 0.1).unwrap();
    w.write_values_csv(&dir.path().join("w.csv")).unwrap();
    w.write_gradients_csv(&dir.path().join("g.csv")).unwrap();
    w.write_boundary_csv(&dir.path().join("b.csv")).unwrap();
    let first = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first("w.csv"), "vertex_id,W");
    assert_eq!(first("g.csv"), "simplex_id,g1,g2,norm");
    assert_eq!(first("b.csv"), "simplex_id,x_start,y_start,x_end,y_end");
}
