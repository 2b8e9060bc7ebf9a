//! Spherical interpolated convolution for 3D point clouds.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] builds close-packed spherical kernels (and the cube baseline)
//!   and reports how much space each cell covers.
//! * [`spatial`] holds the [`PointCloud`] type plus farthest point sampling,
//!   ball query and cell membership, all backed by a uniform grid index.
//! * [`density`] is the learned distance-feature density, [`interp`] the
//!   inverse-square-distance interpolation onto cell centers, and [`convop`]
//!   the per-cell weighted sum. Each has an exact hand-written backward pass.
//! * [`network`] assembles those operators into an encoder/decoder
//!   segmentation network with batch norm, Adam and mIoU evaluation.
//! * [`dataio`] reads and writes clouds and checkpoints, generates synthetic
//!   scenes and tiles large scenes for inference.
//! * [`gradcheck`] compares every backward pass against central differences.
//!
//! Runnable walkthroughs live in `examples/`; the `sphconv` binary exposes the
//! same capabilities as subcommands.

pub mod cli;
pub mod convop;
pub mod dataio;
pub mod density;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod interp;
pub mod network;
pub mod rng;
pub mod spatial;

pub use error::{Error, Result};
pub use geometry::{KernelGeometry, KernelKind, LayoutPreset};
pub use spatial::{Point3, PointCloud};
