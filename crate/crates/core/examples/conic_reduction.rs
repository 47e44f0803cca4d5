//! The 3x3 matrix inequality behind the decrease condition, rewritten as a
//! rotated second-order cone and handed to the solver.
//!
//! For `a = 0` and off-diagonals `(1, 0)` the largest eigenvalue of `M` is
//! `√2 − 1`, so that is the smallest `θ` with `M ⪯ θI`.

use cpabf::conic::{lmi_to_rotated_cone, rotated_cone_holds, solve, AffineExpr, ConeProgram, LinearRow, SolverSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut p = ConeProgram::new();
    let theta = p.add_var("theta");
    let a = AffineExpr::constant(0.0);
    let v = [AffineExpr::constant(1.0), AffineExpr::constant(0.0)];
    let (cone, rows) = lmi_to_rotated_cone(&a, [&v[0], &v[1]], &AffineExpr::var(theta));
    p.add_cone(cone);
    for r in &rows {
        p.add_row(LinearRow::nonneg(r));
    }
    p.add_row(LinearRow::nonneg(&AffineExpr::var(theta)));
    p.objective = vec![(theta, 1.0)];
    print!("{}", p.dump());

    let sol = solve(&p, &SolverSettings::default())?;
    let t = sol.x[theta];
    let exact = 2f64.sqrt() - 1.0;
    println!("status {:?} after {} iterations", sol.status, sol.iterations);
    println!("theta* = {t:.9}, closed form {exact:.9}, error {:.1e}", (t - exact).abs());
    println!("reduced cone holds at theta*: {}", rotated_cone_holds(0.0, [1.0, 0.0], t, 1e-7));
    println!("reduced cone holds at theta* - 1e-3: {}", rotated_cone_holds(0.0, [1.0, 0.0], t - 1e-3, 0.0));
    for (k, (rp, rd)) in sol.residuals.iter().enumerate() {
        println!("  iter {k:2}: primal {rp:.2e} dual {rd:.2e}");
    }
    Ok(())
}
