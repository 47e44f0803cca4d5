mod common;

use cpabf::conic::{solve, AffineExpr, Cone, ConeProgram, ConicError, LinearRow, SolveStatus, SolverSettings};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

/// LP with a known vertex optimum: `n` active half-spaces through `x*` and an
/// objective in the cone of their normals; a loose ball keeps it bounded.
fn lp_instance(rng: &mut ChaCha8Rng) -> (ConeProgram, f64) {
    let n = rng.gen_range(2..6);
    loop {
        let x_star: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let normals = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        if normals.clone().svd(false, false).singular_values.min() < 0.1 {
            continue;
        }
        let mut p = ConeProgram::new();
        let vars: Vec<usize> = (0..n).map(|k| p.add_var(format!("x{k}"))).collect();
        let mut c = DVector::zeros(n);
        for r in 0..n {
            let lam = rng.gen_range(0.1..2.0);
            let a = normals.row(r).transpose();
            c -= lam * &a;
            // a·x ≤ a·x*
            let rhs: f64 = a.iter().zip(&x_star).map(|(ai, xi)| ai * xi).sum();
            let mut e = AffineExpr::constant(-rhs);
            for k in 0..n {
                e = e.term(vars[k], a[k]);
            }
            p.add_row(LinearRow::nonpos(&e));
        }
        let ball: Vec<AffineExpr> = (0..n).map(|k| AffineExpr::var(vars[k]).plus_constant(-x_star[k])).collect();
        p.add_cone(Cone::SecondOrder { t: AffineExpr::constant(10.0), v: ball });
        p.objective = (0..n).map(|k| (vars[k], c[k])).collect();
        let opt: f64 = (0..n).map(|k| c[k] * x_star[k]).sum();
        return (p, opt);
    }
}

/// Linear objective over a ball: optimum `c·p − r‖c‖`.
fn ball_instance(rng: &mut ChaCha8Rng, rotated: bool) -> (ConeProgram, f64) {
    let n = rng.gen_range(2..6);
    let centre: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = rng.gen_range(0.5..2.0);
    let mut p = ConeProgram::new();
    let vars: Vec<usize> = (0..n).map(|k| p.add_var(format!("x{k}"))).collect();
    let v: Vec<AffineExpr> = (0..n).map(|k| AffineExpr::var(vars[k]).plus_constant(-centre[k])).collect();
    if rotated {
        // ‖v‖² ≤ (r²/2)·2
        p.add_cone(Cone::Rotated { s: AffineExpr::constant(r * r / 2.0), t: AffineExpr::constant(2.0), v });
    } else {
        p.add_cone(Cone::SecondOrder { t: AffineExpr::constant(r), v });
    }
    p.objective = (0..n).map(|k| (vars[k], c[k])).collect();
    let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let opt = c.iter().zip(&centre).map(|(a, b)| a * b).sum::<f64>() - r * cn;
    (p, opt)
}

#[test]
fn constructed_optima_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let settings = SolverSettings::default();
    for k in 0..100 {
        let (p, opt) = match k % 3 {
            0 => lp_instance(&mut rng),
            1 => ball_instance(&mut rng, false),
            _ => ball_instance(&mut rng, true),
        };
        let sol = solve(&p, &settings).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "instance {k}");
        assert!(rel(sol.objective, opt) <= 1e-6, "instance {k}: {} vs {opt}", sol.objective);
        assert!(sol.max_violation <= settings.tolerance, "instance {k}: {}", sol.max_violation);
        assert!(!sol.residuals.is_empty());
    }
}

#[test]
fn cone_membership_matches_eigenvalues() {
    assert_eq!(common::cone_vs_eigen(17, 1000, 1e-9), 0);
}

#[test]
fn canonical_instance_gives_sqrt_two_minus_one() {
    let eig = common::lmi_max_eigen(0.0, [1.0, 0.0], 0.0);
    assert!((eig - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    assert!((common::canonical_theta() - (2f64.sqrt() - 1.0)).abs() < 1e-6);
}

#[test]
fn infeasible_and_malformed_programs() {
    let mut p = ConeProgram::new();
    let x = p.add_var("x");
    p.add_row(LinearRow::nonneg(&AffineExpr::var(x).plus_constant(-1.0)));
    p.add_row(LinearRow::nonpos(&AffineExpr::var(x)));
    p.objective = vec![(x, 1.0)];
    assert_eq!(solve(&p, &SolverSettings::default()).unwrap().status, SolveStatus::Infeasible);

    let mut q = ConeProgram::new();
    let y = q.add_var("y");
    q.objective = vec![(y + 1, 1.0)];
    assert!(matches!(solve(&q, &SolverSettings::default()), Err(ConicError::Malformed(_))));
    q.objective = vec![(y, f64::NAN)];
    assert!(matches!(solve(&q, &SolverSettings::default()), Err(ConicError::Malformed(_))));
}

#[test]
fn unbounded_program_is_flagged() {
    let mut p = ConeProgram::new();
    let x = p.add_var("x");
    p.add_row(LinearRow::nonpos(&AffineExpr::var(x)));
    p.objective = vec![(x, 1.0)];
    assert_eq!(solve(&p, &SolverSettings::default()).unwrap().status, SolveStatus::Unbounded);
}
