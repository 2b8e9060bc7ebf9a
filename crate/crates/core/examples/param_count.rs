//! Parameter and multiply-add totals of the full network with either kernel.
//!
//! `cargo run --example param_count`

use sphconv::convop::count_params_flops;
use sphconv::network::NetworkConfig;

fn main() -> sphconv::Result<()> {
    let mut config = NetworkConfig::default();
    for density in [false, true] {
        config.use_density = density;
        let report = count_params_flops(&config);
        println!("density {}", if density { "on" } else { "off" });
        println!("{report}");
        let (s, c) = (&report.sphere, &report.cube);
        println!(
            "conv weights {} vs {} ({:.3}), totals {} vs {}\n",
            s.conv_weights(),
            c.conv_weights(),
            s.conv_weights() as f64 / c.conv_weights() as f64,
            s.total_params(),
            c.total_params()
        );
    }
    Ok(())
}
