//! Raster types and the deterministic low-level image primitives shared by
//! both detection stages and by calibration-marker localization.
//!
//! All operations are pure: identical inputs give bit-identical outputs.

mod circle;
mod cross;
mod image;
mod marker;
mod regions;
mod tone;

pub use circle::{detect_outer_circle, CircleParams};
pub use cross::{detect_cross_center, CrossParams};
pub use image::{BinaryMask, BoundingBox, GrayImage, ProbabilityMap, RgbImage};
pub use marker::{find_marker_centroid, ColorWindow};
pub use regions::{connected_regions, label_components, Component};
pub use tone::{auto_gamma, equalize_hist, gamma_correct, threshold, to_grayscale, GammaCorrect};

#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("raster length mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("pixel value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("no circle found (peak score {score:.3})")]
    NoCircle { score: f64 },
    #[error("no cross recess found ({dark_pixels} dark pixels)")]
    NoCross { dark_pixels: usize },
    #[error("no marker candidate in color window")]
    NoMarker,
    #[error("{count} marker candidates, expected exactly one")]
    AmbiguousMarker { count: usize },
}

/// Sub-pixel image coordinates in pixel units; pixel `(i, j)` covers
/// `[i, i + 1) × [j, j + 1)`, so its center is at `(i + 0.5, j + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Power-law exponent, clamped to [`GammaParam::MIN`, `GammaParam::MAX`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaParam(f64);

impl GammaParam {
    pub const MIN: f64 = 0.3;
    pub const MAX: f64 = 3.0;

    /// Clamps into range; non-finite input maps to the neutral exponent.
    pub fn new(gamma: f64) -> Self {
        if gamma.is_nan() {
            return Self(1.0);
        }
        Self(gamma.clamp(Self::MIN, Self::MAX))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Outer-circle estimate of a screw head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleFit {
    pub center: Point2,
    pub radius: f64,
    pub score: f64,
}

/// Cross-recess center estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossFit {
    pub center: Point2,
    pub score: f64,
}
