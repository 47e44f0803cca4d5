//! Refinement from a coarse grid: bisect the worst simplices until the
//! decrease condition holds, then add samples along the zero level set.
//!
//! Every boundary round starts from a certified barrier. Its new vertices are
//! midpoints of edges the boundary crosses, so the function itself does not
//! change until the next solve.

use cpabf::dataset::grid_sample;
use cpabf::dynamics::Benchmark;
use cpabf::synthesis::{resume, synthesize_with, OracleSource, RefinementMode, SynthesisConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rounds: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2);
    let bm = Benchmark::LinearAuto;
    let oracle = bm.oracle();
    let data = grid_sample(oracle.as_ref(), &bm.state_box(), 0.25, None)?;
    let source = OracleSource::matching(oracle.as_ref(), &data);

    let feas = SynthesisConfig {
        refinement: RefinementMode::Feasibility,
        refine_after: Some(10),
        max_refinements: 60,
        max_iter_expansion: 30,
        ..Default::default()
    };
    let coarse = synthesize_with(data, &feas, Some(&source))?;
    println!(
        "after feasibility refinement: {} vertices ({} inserted), verified = {}, safe area {:.5}",
        coarse.triangulation().vertex_count(),
        coarse.inserted.len(),
        coarse.feasible(),
        coarse.safe_area()?
    );
    if !coarse.feasible() {
        return Ok(());
    }

    let config = SynthesisConfig { refinement: RefinementMode::Boundary, max_refinements: rounds, ..feas };
    let area_before = coarse.safe_area()?;
    let refined = resume(coarse.state.clone(), &config, Some(&source))?;
    println!(
        "after {rounds} boundary rounds: {} vertices ({} inserted), verified = {}, safe area {:.5} (was {area_before:.5})",
        refined.triangulation().vertex_count(),
        refined.inserted.len(),
        refined.feasible(),
        refined.safe_area()?
    );
    Ok(())
}
