//! Finite-difference check of every hand-written backward pass.
//!
//! `cargo run --release --example gradcheck -- [seeds]`

use sphconv::gradcheck::{run_suite, table_header};

fn main() -> sphconv::Result<()> {
    let n: u64 = std::env::args().nth(1).map_or(3, |a| a.parse().expect("seed count"));
    let seeds: Vec<u64> = (0..n).collect();
    println!("{}", table_header());
    let rows = run_suite(&seeds)?;
    for r in &rows {
        println!("{r}");
    }
    let failed = rows.iter().filter(|r| !r.passed()).count();
    println!("{} operators, {failed} failed", rows.len());
    Ok(())
}
