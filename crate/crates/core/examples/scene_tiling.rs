//! Split a synthetic street-sized scene into overlapping cubes and stitch
//! per-tile scores back into one label per point.
//!
//! `cargo run --example scene_tiling`

use ndarray::Array2;
use rand::Rng as _;
use sphconv::dataio::tiling::STREET_PRESET;
use sphconv::dataio::{stitch_predictions, tile_scene};
use sphconv::rng::rng_for;
use sphconv::{Point3, PointCloud};

fn main() -> sphconv::Result<()> {
    let mut rng = rng_for(3, "street");
    let pts: Vec<Point3> = (0..20_000)
        .map(|_| [rng.random_range(0.0..40.0), rng.random_range(0.0..12.0), rng.random_range(0.0..6.0)])
        .collect();
    let scene = PointCloud::from_positions(pts)?;
    let (size, overlap) = STREET_PRESET;
    let tiles = tile_scene(&scene, size, overlap)?;
    let visits: usize = tiles.iter().map(|t| t.point_indices.len()).sum();
    println!(
        "{} tiles of {size:?} with overlap {overlap}; each point is seen {:.2} times on average",
        tiles.len(),
        visits as f64 / scene.len() as f64
    );

    // stand-in scores: class 1 when the point sits above 3 m
    let logits: Vec<Array2<f64>> = tiles
        .iter()
        .map(|t| {
            Array2::from_shape_fn((t.point_indices.len(), 2), |(i, c)| {
                let high = scene.positions[t.point_indices[i]][2] > 3.0;
                f64::from(u8::from(high == (c == 1)))
            })
        })
        .collect();
    let labels = stitch_predictions(scene.len(), &tiles, &logits)?;
    let high = labels.iter().filter(|&&l| l == 1).count();
    println!("{high} of {} points labelled high", scene.len());
    Ok(())
}
