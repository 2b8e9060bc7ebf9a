//! File formats, synthetic scenes and scene tiling.

pub mod checkpoint;
pub mod pts;
pub mod synth;
pub mod tiling;

pub use checkpoint::Checkpoint;
pub use pts::{read_cloud, read_cloud_with, write_cloud, AsciiLayout};
pub use synth::{synth_scene, synth_scenes, Primitive, PrimitiveSpec, SceneSpec, ShapeKind, SynthScene};
pub use tiling::{stitch_predictions, tile_scene, SceneTile};
