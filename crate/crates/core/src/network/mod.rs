//! The segmentation network: configuration, layers, training and metrics.

pub mod config;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod sph_conv;
pub mod train;

pub use config::NetworkConfig;
pub use metrics::{cross_entropy, evaluate_miou, Confusion};
pub use model::{argmax_rows, Mode, Network};
pub use optim::Adam;
pub use sph_conv::SphConv;
pub use train::{evaluate, train, EpochRecord, TrainOptions, TrainState};
