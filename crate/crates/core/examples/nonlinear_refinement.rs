//! Nonlinear system with feasibility refinement: when the slack stops
//! shrinking, the worst simplices are bisected and the new vertices are
//! sampled from the system before the iteration continues.

use cpabf::dataset::grid_sample;
use cpabf::dynamics::Benchmark;
use cpabf::synthesis::{synthesize_with, OracleSource, RefinementMode, SynthesisConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bm = Benchmark::NonlinearAuto;
    let oracle = bm.oracle();
    let data = grid_sample(oracle.as_ref(), &bm.state_box(), bm.state_spacing(), None)?;
    let source = OracleSource::matching(oracle.as_ref(), &data);
    let config = SynthesisConfig {
        refinement: RefinementMode::Feasibility,
        max_refinements: 6,
        refine_after: Some(20),
        max_iter_expansion: 30,
        ..Default::default()
    };
    let result = synthesize_with(data, &config, Some(&source))?;

    for r in result.log.iter().filter(|r| r.iter % 10 == 0) {
        println!("{:4} {:?} cost {:.6e} max slack {:.3e}", r.iter, r.phase, r.cost, r.max_slack);
    }
    let mut rounds: Vec<usize> = result.inserted.iter().map(|p| p.round).collect();
    rounds.dedup();
    for round in rounds {
        let n = result.inserted.iter().filter(|p| p.round == round).count();
        println!("refinement round {round}: {n} vertices inserted");
    }
    println!(
        "mesh now has {} vertices; slack-free = {}, verified = {}",
        result.triangulation().vertex_count(),
        result.phase1_converged,
        result.feasible()
    );
    if !result.phase1_converged {
        println!("worst simplices by slack: {:?}", result.stalled_on);
    }
    Ok(())
}
