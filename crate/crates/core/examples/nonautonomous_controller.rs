//! Barrier synthesis with inputs, then the piecewise-constant controller read
//! off the per-simplex input choice.

use cpabf::dataset::grid_sample;
use cpabf::dynamics::{simulate, Benchmark};
use cpabf::synthesis::{synthesize, SynthesisConfig};
use cpabf::verify::{empirical_invariance, extract_controller};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bm = Benchmark::LinearNonauto;
    let oracle = bm.oracle();
    let ubox = bm.input_box().ok_or("system has no inputs")?;
    let h_u = bm.input_spacing().unwrap_or(0.1);
    let data = grid_sample(oracle.as_ref(), &bm.state_box(), bm.state_spacing(), Some((&ubox, h_u)))?;
    let config = SynthesisConfig { max_iter_expansion: 30, ..Default::default() };
    let result = synthesize(data, &config)?;
    println!(
        "verified = {} after {} iterations, safe area = {:.4}, b = {:.4}",
        result.feasible(),
        result.log.len(),
        result.safe_area()?,
        result.b()
    );

    let controller = extract_controller(result.triangulation(), result.dataset(), result.xi())?;
    let w = result.barrier();
    let traj = simulate(oracle.as_ref(), Some(&controller), &[0.5, -0.5], 10)?;
    for (k, x) in traj.states.iter().enumerate() {
        let u = traj.inputs.get(k).map(|u| format!("{:+.2}", u[0])).unwrap_or_default();
        println!("  x{k:<2} = ({:+.4}, {:+.4})  W = {:+.4}  u = {u}", x[0], x[1], w.evaluate_extended(x));
    }

    let audit = empirical_invariance(oracle.as_ref(), Some(&controller), &w, 1000, 100, 7)?;
    println!(
        "{} rollouts of {} steps: {} violations, max |u| = {:.2}",
        audit.samples,
        audit.horizon,
        audit.violations.len(),
        audit.max_abs_input
    );
    Ok(())
}
