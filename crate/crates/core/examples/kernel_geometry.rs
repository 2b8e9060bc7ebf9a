//! Build the 15-cell sphere-packed kernel and the 27-cell cube grid, grow the
//! sphere kernel on its lattice and print the structural report of each.
//!
//! `cargo run --example kernel_geometry -- [radius]`

use sphconv::geometry::{build_kernel, expand_kernel, layer_counts, validate_lattice, ExpandMode};
use sphconv::{KernelKind, LayoutPreset};

fn main() -> sphconv::Result<()> {
    let r: f64 = std::env::args().nth(1).map_or(1.0, |a| a.parse().expect("radius"));

    let k15 = build_kernel(KernelKind::SpherePacked, r, &LayoutPreset::K15)?;
    println!("K15 at r = {r}");
    for p in &k15.cell_offsets {
        println!("  {:>9.5} {:>9.5} {:>9.5}", p[0], p[1], p[2]);
    }
    println!("{}", validate_lattice(&k15));

    let c27 = build_kernel(KernelKind::CubeGrid, r, &LayoutPreset::C27)?;
    println!("C27: {} cells, cell half-side {}", c27.len(), c27.cell_radius);

    let tall = expand_kernel(&k15, ExpandMode::Vertical)?;
    let wide = expand_kernel(&k15, ExpandMode::Horizontal)?;
    for (name, k) in [("vertical", &tall), ("horizontal", &wide)] {
        let layers: Vec<String> = layer_counts(k).iter().map(|(z, n)| format!("{z:.3}:{n}")).collect();
        println!("{name} expansion: {} cells, layers {}", k.len(), layers.join(" "));
    }
    Ok(())
}
