//! Compare a certified safe set with a brute-force estimate of the maximal
//! invariant set obtained by simulating every cell center.

use cpabf::dataset::grid_sample;
use cpabf::dynamics::Benchmark;
use cpabf::synthesis::{synthesize, SynthesisConfig};
use cpabf::verify::maximal_set_oracle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bm = Benchmark::LinearAuto;
    let oracle = bm.oracle();
    let sbox = bm.state_box();
    let data = grid_sample(oracle.as_ref(), &sbox, 0.125, None)?;
    let result = synthesize(data, &SynthesisConfig { max_iter_expansion: 20, ..Default::default() })?;
    let w = result.barrier();

    let h = 0.01;
    let grid = maximal_set_oracle(oracle.as_ref(), &sbox, h, 200)?;
    // a cell is certified when W at its center is below −b times its diagonal
    let margin = result.b() * h * 2f64.sqrt();
    let (mut certified, mut wrong) = (0usize, 0usize);
    for idx in 0..grid.len() {
        if w.evaluate_extended(&grid.center(idx)) <= -margin {
            certified += 1;
            if !grid.safe[idx] {
                wrong += 1;
            }
        }
    }
    let cell = h * h;
    println!("box area {:.4}", sbox.volume());
    println!("oracle safe area     {:.4}", grid.safe_fraction() * grid.len() as f64 * cell);
    println!("certified cell area  {:.4}", certified as f64 * cell);
    println!("certified cells that the oracle calls unsafe: {wrong}");
    Ok(())
}
