//! Core algorithms for robotic screw removal: two-stage screw detection on
//! RGB-D images and lattice-based local hand-eye calibration.
//!
//! The crate is `#![no_std]` and only needs `alloc`. Everything here is a pure
//! function of its inputs (and of an explicit seed where randomness is
//! involved), so results are bit-reproducible across runs. File formats,
//! the CLI and the evaluation harness live in the `dismantle` crate.
//!
//! Module map:
//!
//! - [`imgproc`]: raster types and deterministic image primitives
//!   (gamma, histogram equalization, connected regions, circle and cross
//!   center estimation, marker centroids).
//! - [`fcn`]: a small fully convolutional pixel classifier with training.
//! - [`camera`]: pinhole camera with radial distortion.
//! - [`detect`]: the coarse-to-fine screw detection pipeline.
//! - [`calib`]: lattice collection, global affine fit, 27-point quadratic
//!   interpolation and per-node corrections.
//! - [`synth`]: synthetic ground-truth world, scene and patch renderers.
//! - [`stats`]: reliability arithmetic and evaluation statistics.

#![no_std]

extern crate alloc;

pub mod calib;
pub mod camera;
pub mod detect;
pub mod fcn;
pub mod imgproc;
pub mod linalg;
pub mod stats;
pub mod synth;

mod util;

pub use camera::CameraIntrinsics;
