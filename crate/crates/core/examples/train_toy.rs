//! Train the toy segmentation network on synthetic three-class scenes and
//! report held-out accuracy and mIoU after every epoch.
//!
//! `cargo run --release --example train_toy -- [scenes] [epochs]`

use std::time::Instant;

use sphconv::dataio::{synth_scenes, SceneSpec};
use sphconv::network::{train, NetworkConfig, TrainOptions, TrainState};
use sphconv::PointCloud;

fn main() -> sphconv::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let count = args.next().unwrap_or(200);
    let epochs = args.next().unwrap_or(20);
    let held_out = count / 5;

    let spec = SceneSpec::three_class();
    let scenes: Vec<PointCloud> = synth_scenes(7, count, &spec)?.into_iter().map(|s| s.cloud).collect();
    let (val, tr) = scenes.split_at(held_out);

    let config = NetworkConfig::toy();
    let mut state = TrainState::new(&config, 7)?;
    println!("{} parameters, {} train / {} held-out scenes", state.net.param_count(), tr.len(), val.len());
    let start = Instant::now();
    let options = TrainOptions {
        epochs,
        early_stop: None,
    };
    train(&mut state, tr, val, &options, |r| {
        let v = r.validation.as_ref().expect("held-out split is non-empty");
        println!(
            "epoch {:>2}  loss {:.4}  acc {:.4}  mIoU {:.4}  {:.0}s",
            r.epoch,
            r.mean_loss,
            v.accuracy(),
            v.miou(),
            start.elapsed().as_secs_f64()
        );
    })?;
    Ok(())
}
