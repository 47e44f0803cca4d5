//! Barrier synthesis for the stable linear reference system from its reference grid.
//!
//! Pass a number to cap the expansion phase, e.g.
//! `cargo run --release --example linear_autonomous -- 40`.

use cpabf::dataset::grid_sample;
use cpabf::dynamics::Benchmark;
use cpabf::synthesis::{synthesize, Phase, SynthesisConfig};
use cpabf::verify::empirical_invariance;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cap: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(60);
    let bm = Benchmark::LinearAuto;
    let oracle = bm.oracle();
    let data = grid_sample(oracle.as_ref(), &bm.state_box(), bm.state_spacing(), None)?;
    let config = SynthesisConfig { max_iter_expansion: cap, ..Default::default() };
    let result = synthesize(data, &config)?;

    println!("iter phase        cost         max slack  b");
    for r in &result.log {
        println!("{:4} {:<12} {:<12.6e} {:<10.3e} {:.4}", r.iter, format!("{:?}", r.phase), r.cost, r.max_slack, r.b);
    }
    println!(
        "phase 1: {} iterations, converged = {}; phase 2: {} iterations",
        result.iterations(Phase::Feasibility),
        result.phase1_converged,
        result.iterations(Phase::Expansion)
    );
    for c in &result.certificate.conditions {
        println!("{:<15} passed = {:<5} worst margin {:+.3e}", c.condition, c.passed, c.worst_margin);
    }
    println!("verified = {}, safe area = {:.4}", result.feasible(), result.safe_area()?);

    let audit = empirical_invariance(oracle.as_ref(), None, &result.barrier(), 1000, 100, 42)?;
    println!("{} rollouts, {} left the safe set", audit.samples, audit.violations.len());
    Ok(())
}
