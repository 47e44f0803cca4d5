//! Delaunay mesh of a grid, point location, barycentric weights and
//! longest-edge bisection.

use cpabf::geometry::{delaunay_triangulate, Point};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut pts = Vec::new();
    for i in 0..=4 {
        for j in 0..=4 {
            pts.push(Point::from([-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64]));
        }
    }
    let mut tri = delaunay_triangulate(&pts)?;
    tri.validate()?;
    println!("{} vertices, {} simplices, area {:.4}", tri.vertex_count(), tri.simplex_count(), tri.total_volume());

    let x = [0.3, -0.1];
    let (s, bary) = tri.locate_with_weights(&x).ok_or("query point is outside the mesh")?;
    println!("{x:?} lies in simplex {s} {:?}", tri.simplex(s).vertex_ids());
    println!("  barycentric weights {:?}", bary.weights());

    let (a, b) = tri.longest_edge(s);
    let cut = tri.bisect_longest_edge(s)?;
    println!(
        "bisected edge ({a}, {b}) at {:?}: new vertex {}, {} simplices split",
        cut.midpoint.coords(),
        cut.vertex,
        cut.splits.len()
    );
    tri.validate()?;
    println!("mesh still conforming: {} simplices, area {:.4}", tri.simplex_count(), tri.total_volume());
    Ok(())
}
