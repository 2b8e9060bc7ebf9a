//! Show how density weighting cancels duplicated points: one kernel cell is
//! interpolated from a cloud, then from the same cloud with one point copied
//! five times, with and without the matching density.
//!
//! `cargo run --example density_interp`

use ndarray::array;
use sphconv::density::{density_forward, DensityParams};
use sphconv::geometry::build_kernel;
use sphconv::interp::interpolate;
use sphconv::rng::rng_for;
use sphconv::{KernelKind, LayoutPreset};

fn main() -> sphconv::Result<()> {
    let geometry = build_kernel(KernelKind::SpherePacked, 1.0, &LayoutPreset::Explicit(vec![[0.0; 3]]))?;
    let base = [[0.3, 0.0, 0.0], [-0.2, 0.4, 0.1], [0.0, -0.5, -0.3]];
    let feats = array![[1.0], [2.0], [3.0]];

    let (clean, _) = interpolate(&base, feats.view(), &[[0.0; 3]], &geometry, None)?;

    let mut dup = base.to_vec();
    dup.extend([base[2]; 4]);
    let dup_feats = array![[1.0], [2.0], [3.0], [3.0], [3.0], [3.0], [3.0]];
    let (naive, _) = interpolate(&dup, dup_feats.view(), &[[0.0; 3]], &geometry, None)?;
    let rho = [1.0, 1.0, 5.0, 5.0, 5.0, 5.0, 5.0];
    let (weighted, _) = interpolate(&dup, dup_feats.view(), &[[0.0; 3]], &geometry, Some(&rho))?;

    println!("clean cloud         {:.6}", clean.values[[0, 0]]);
    println!("duplicated, no rho  {:.6}", naive.values[[0, 0]]);
    println!("duplicated, rho = m {:.6}", weighted.values[[0, 0]]);

    // the learned estimator maps neighbourhood features to a density in (0, 1]
    let params = DensityParams::init(1, (16, 8), 1.0, &mut rng_for(0, "density"));
    let (learned, _) = density_forward(&dup, dup_feats.view(), &params, 0.2, 8)?;
    println!("untrained density estimate per point: {learned:.3?}");
    Ok(())
}
