//! Grid sampling of a reference system, CSV round trip and an empirical
//! check of the declared Lipschitz constant.

use cpabf::dataset::{grid_sample, Dataset};
use cpabf::dynamics::Benchmark;
use cpabf::verify::lipschitz_audit;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bm = Benchmark::LinearNonauto;
    let oracle = bm.oracle();
    let ubox = bm.input_box().ok_or("system has no inputs")?;
    let data = grid_sample(oracle.as_ref(), &bm.state_box(), 0.25, Some((&ubox, 0.5)))?;
    println!("{} states, {} inputs each", data.len(), data.transitions_per_state());

    let dir = std::env::temp_dir().join("cpabf-sample-dataset");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("data.csv");
    data.save(&path)?;
    let back = Dataset::load(&path)?;
    assert_eq!(back.len(), data.len());
    println!("saved to {} (sidecar {})", path.display(), Dataset::sidecar_path(&path).display());

    println!("declared Lipschitz info: {:?}", data.lipschitz());
    println!(
        "largest ratio seen on the grid: {:.4} (implied joint constant {:.4})",
        data.estimate_lipschitz_lower_bound(),
        data.lipschitz().joint_equivalent()
    );
    let audit = lipschitz_audit(oracle.as_ref(), &bm.state_box(), Some(&ubox), 10_000, 1)?;
    println!("random pairs: worst ratio {:.4}, {} violations", audit.worst_ratio, audit.violations);
    Ok(())
}
