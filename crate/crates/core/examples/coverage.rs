//! Compare the covered volume per cell of the two kernels, analytically and by
//! Monte-Carlo sampling.
//!
//! `cargo run --release --example coverage -- [samples]`

use sphconv::geometry::{coverage_stats, CoverageMethod};
use sphconv::KernelKind;

fn main() -> sphconv::Result<()> {
    let samples: usize = std::env::args().nth(1).map_or(1_000_000, |a| a.parse().expect("sample count"));
    for kind in [KernelKind::SpherePacked, KernelKind::CubeGrid] {
        let exact = coverage_stats(kind, 1.0, CoverageMethod::Analytic, 0)?;
        let mc = coverage_stats(kind, 1.0, CoverageMethod::MonteCarlo, samples)?;
        println!("{exact}");
        println!("{mc}");
        let se = mc.mc_stderr.unwrap_or(f64::NAN);
        let z = (exact.per_cell_covered_volume - mc.per_cell_covered_volume) / se;
        println!("{kind}: Monte-Carlo off by {z:.2} standard errors\n");
    }
    Ok(())
}
