//! Write a result bundle, read it back, re-verify it independently and render
//! an SVG of the barrier with a few controlled trajectories.

use cpabf::bundle::{write_result, Bundle};
use cpabf::dataset::grid_sample;
use cpabf::dynamics::{simulate, Benchmark};
use cpabf::plot::{render_svg, PlotOptions};
use cpabf::synthesis::{synthesize, SynthesisConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("cpabf-bundle"));
    let bm = Benchmark::LinearNonauto;
    let oracle = bm.oracle();
    let ubox = bm.input_box().ok_or("system has no inputs")?;
    let data = grid_sample(oracle.as_ref(), &bm.state_box(), 0.125, Some((&ubox, 0.25)))?;
    let result = synthesize(data, &SynthesisConfig { max_iter_expansion: 10, ..Default::default() })?;
    let summary = write_result(&result, &out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);

    let bundle = Bundle::read(&out)?;
    let report = bundle.verify()?;
    println!("re-verified from disk: {}", report.passed);

    // start a few trajectories from mesh vertices well inside the safe set
    let w = bundle.barrier()?;
    let controller = bundle.controller()?;
    let mut trajectories = Vec::new();
    for (v, _) in bundle.values.iter().enumerate().filter(|(_, &wv)| wv < -0.5).step_by(7).take(4) {
        let x0 = bundle.triangulation.vertex(v);
        trajectories.push(simulate(oracle.as_ref(), Some(&controller), x0, 30)?.states);
    }
    let svg = render_svg(&w, &PlotOptions { trajectories, ..Default::default() })?;
    std::fs::write(out.join("barrier.svg"), svg)?;
    println!("bundle and barrier.svg written to {}", out.display());
    Ok(())
}
