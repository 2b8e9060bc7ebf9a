//! Generate synthetic scenes, train briefly, save a checkpoint, reload it and
//! label a fresh scene tile by tile.
//!
//! `cargo run --release --example synth_infer -- [epochs]`

use sphconv::dataio::{stitch_predictions, synth_scene, synth_scenes, tile_scene, Checkpoint, SceneSpec};
use sphconv::network::{evaluate_miou, train, NetworkConfig, TrainOptions, TrainState};
use sphconv::PointCloud;

fn main() -> sphconv::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(3, |a| a.parse().expect("epoch count"));
    let spec = SceneSpec::three_class();
    let scenes: Vec<PointCloud> = synth_scenes(11, 60, &spec)?.into_iter().map(|s| s.cloud).collect();
    let (val, tr) = scenes.split_at(10);

    let config = NetworkConfig::toy();
    let mut state = TrainState::new(&config, 11)?;
    let options = TrainOptions {
        epochs,
        early_stop: None,
    };
    train(&mut state, tr, val, &options, |r| println!("epoch {} loss {:.4}", r.epoch, r.mean_loss))?;

    let path = std::env::temp_dir().join("sphconv_synth_infer.sicn");
    Checkpoint::from_state(&state).save(&path)?;
    let mut net = Checkpoint::load(&path)?.to_network()?;

    // a scene the network never saw, cut into half-size cubes
    let fresh = synth_scene(11, 1000, &spec)?.cloud;
    let tiles = tile_scene(&fresh, [0.5, 0.5, 0.5], 0.1)?;
    let mut logits = Vec::new();
    for t in &tiles {
        let mut tile = fresh.select(&t.point_indices);
        for p in &mut tile.positions {
            for ax in 0..3 {
                p[ax] -= t.cube_min[ax];
            }
        }
        logits.push(net.logits(&tile)?);
    }
    let pred = stitch_predictions(fresh.len(), &tiles, &logits)?;
    let truth = fresh.labels.as_deref().expect("synthetic scenes are labelled");
    let (_, miou) = evaluate_miou(&pred, truth, config.n_classes, None)?;
    let whole = net.predict(&fresh)?;
    let (_, miou_whole) = evaluate_miou(&whole, truth, config.n_classes, None)?;
    println!("{} tiles: mIoU {miou:.3}; whole scene at once: mIoU {miou_whole:.3}", tiles.len());
    Ok(())
}
