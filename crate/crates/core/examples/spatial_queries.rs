//! Farthest-point sampling, ball query and kernel cell assignment on a random
//! cloud.
//!
//! `cargo run --example spatial_queries`

use rand::Rng as _;
use sphconv::geometry::build_kernel;
use sphconv::rng::rng_for;
use sphconv::spatial::{assign_cells, ball_query, farthest_point_sample};
use sphconv::{KernelKind, LayoutPreset, Point3};

fn main() -> sphconv::Result<()> {
    let mut rng = rng_for(1, "points");
    let pts: Vec<Point3> = (0..2000).map(|_| [0.0; 3].map(|_: f64| rng.random_range(-2.0..2.0))).collect();

    let centers_idx = farthest_point_sample(&pts, 8, 0)?;
    let centers: Vec<Point3> = centers_idx.iter().map(|&i| pts[i]).collect();
    println!("FPS picked {centers_idx:?}");

    let table = ball_query(&pts, &centers, 0.5, 32)?;
    for j in 0..centers.len() {
        println!("center {j}: {} neighbours within 0.5 (k = 32)", table.valid_counts[j]);
    }

    let geometry = build_kernel(KernelKind::SpherePacked, 0.25, &LayoutPreset::K15)?;
    let cells = assign_cells(&pts, &centers[..1], &geometry);
    let occupancy: Vec<usize> = (0..geometry.len()).map(|k| cells.members(0, k).len()).collect();
    println!("cell occupancy around center 0: {occupancy:?}");
    Ok(())
}
