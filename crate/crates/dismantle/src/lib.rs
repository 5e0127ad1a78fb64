//! File formats, evaluation harness and CLI plumbing around `dismantle-core`.
//!
//! - [`config`]: the JSON run configuration shared by all subcommands.
//! - [`io`]: PNG, PGM, raw depth, weight, lattice and scene-bundle formats.
//! - [`harness`]: dataset generation, training, and the detection,
//!   calibration and unit-level evaluations.
//! - [`report`]: the report envelope and acceptance checks.
//! - [`commands`]: the subcommands, as called by the `dismantle` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod report;

pub use error::{Error, Result};
