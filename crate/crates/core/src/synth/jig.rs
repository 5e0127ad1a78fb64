//! Calibration jig: a gray plate carrying a red marker, held by the tool.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::noise::derive_seed;
use super::world::TrueWorldModel;
use crate::calib::{
    collect_with, CalibError, CalibrationLattice, CorrespondenceSource, WorkVolume,
};
use crate::camera::CameraIntrinsics;
use crate::detect::DepthMap;
use crate::imgproc::{find_marker_centroid, ColorWindow, ImageError, Point2, RgbImage};
use crate::util::median_in_place;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureParams {
    pub plate_diameter_mm: f64,
    pub marker_diameter_mm: f64,
    /// Side of the square window whose depth median is taken.
    pub depth_window: usize,
    pub plate_gray: f64,
    pub background_gray: f64,
    pub window: ColorWindow,
    pub min_area: usize,
    /// Per-node probability of an occluded marker.
    pub occlusion_rate: f64,
    /// Per-node probability of a second marker in view.
    pub double_marker_rate: f64,
    /// Depth noise override; `None` uses the world's.
    pub depth_noise_sigma: Option<f64>,
}

impl Default for CaptureParams {
    fn default() -> Self {
        Self {
            plate_diameter_mm: 20.0,
            marker_diameter_mm: 8.0,
            depth_window: 7,
            plate_gray: 0.7,
            background_gray: 0.15,
            window: ColorWindow {
                lo: [0.4, 0.0, 0.0],
                hi: [1.0, 1.0, 1.0],
            },
            min_area: 50,
            occlusion_rate: 0.0,
            double_marker_rate: 0.0,
            depth_noise_sigma: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JigFault {
    None,
    /// Something covers the marker.
    Occluded,
    /// A second marker shares the view.
    DoubleMarker,
}

/// Region of interest around the expected marker position.
#[derive(Clone, Debug, PartialEq)]
pub struct JigCapture {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    /// Sensor position of the ROI's top-left corner.
    pub origin: [f64; 2],
    /// Camera of the full sensor.
    pub intrinsics: CameraIntrinsics,
}

/// Cubic B-spline on `[-2, 2]`. Samples at unit spacing of `b(t / s)` for
/// integer `s` have a chroma centroid exactly at the spline center.
fn bspline(t: f64) -> f64 {
    let a = t.abs();
    if a >= 2.0 {
        0.0
    } else if a >= 1.0 {
        let u = 2.0 - a;
        u * u * u / 6.0
    } else {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    }
}

/// Renders the jig held at robot command `r`.
pub fn simulate_jig_capture(
    world: &TrueWorldModel,
    r: [f64; 3],
    params: &CaptureParams,
    fault: JigFault,
    seed: u64,
) -> Result<JigCapture, ImageError> {
    let intr = *world.intrinsics();
    let pc = world.tool_in_camera(r);
    let (u, zm) = world
        .observe_point(pc)
        .map_err(|_| ImageError::InvalidParameter("tool behind camera"))?;
    let px_per_mm = intr.fx / pc[2];
    let plate_r = params.plate_diameter_mm / 2.0 * px_per_mm;
    // Spline support radius is 2s pixels.
    let s = ((params.marker_diameter_mm / 4.0 * px_per_mm).round()).max(1.0);
    let half = (plate_r + 10.0).ceil() as i64;
    let size = (2 * half) as usize;
    let origin = [
        (u.x.floor() as i64 - half) as f64,
        (u.y.floor() as i64 - half) as f64,
    ];
    let (cu, cv) = (u.x - origin[0], u.y - origin[1]);

    let second = [cu + 0.85 * plate_r, cv + 0.85 * plate_r];
    let second_r = 0.15 * plate_r;
    let (g, bg) = (params.plate_gray, params.background_gray);
    let rgb = RgbImage::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let d = (px - cu).hypot(py - cv);
        if d <= plate_r {
            if fault == JigFault::Occluded && d <= 3.0 * s {
                return [0.1; 3];
            }
            let f = bspline((px - cu) / s) * bspline((py - cv) / s) / (bspline(0.0) * bspline(0.0));
            return [g + 0.3 * f, g - 0.6 * f, g - 0.6 * f];
        }
        if fault == JigFault::DoubleMarker && (px - second[0]).hypot(py - second[1]) <= second_r {
            return [g + 0.3, g - 0.6, g - 0.6];
        }
        [bg; 3]
    });

    let sigma = params
        .depth_noise_sigma
        .unwrap_or(world.params.depth_noise_sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let depth: Vec<f64> = (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
            let base = if (x - cu).hypot(y - cv) <= plate_r {
                zm
            } else {
                zm + 200.0
            };
            if sigma > 0.0 {
                base + noise.sample(&mut rng)
            } else {
                base
            }
        })
        .collect();
    let depth = DepthMap::new(size, size, depth).expect("sizes consistent");
    Ok(JigCapture {
        rgb,
        depth,
        origin,
        intrinsics: intr,
    })
}

/// Marker centroid plus windowed depth median, back-projected to a camera point.
pub fn measure_marker(
    capture: &JigCapture,
    params: &CaptureParams,
) -> Result<[f64; 3], ImageError> {
    let max_area = capture.rgb.width() * capture.rgb.height();
    let c = find_marker_centroid(&capture.rgb, &params.window, params.min_area, max_area)?;
    let half = (params.depth_window.max(1) / 2) as i64;
    let (cx, cy) = (c.x.floor() as i64, c.y.floor() as i64);
    let mut samples = Vec::new();
    for y in cy - half..=cy + half {
        for x in cx - half..=cx + half {
            if x >= 0
                && y >= 0
                && (x as usize) < capture.depth.width()
                && (y as usize) < capture.depth.height()
            {
                let z = capture.depth.get(x as usize, y as usize);
                if z.is_finite() {
                    samples.push(z);
                }
            }
        }
    }
    let z = median_in_place(&mut samples)
        .ok_or(ImageError::InvalidParameter("no valid depth at marker"))?;
    let global = Point2::new(c.x + capture.origin[0], c.y + capture.origin[1]);
    Ok(capture.intrinsics.back_project_pinhole(global, z))
}

/// Lattice measurement source backed by the simulated jig.
#[derive(Clone, Debug)]
pub struct JigObserver<'a> {
    pub world: &'a TrueWorldModel,
    pub params: CaptureParams,
    pub seed: u64,
    /// Lattice width and depth, to derive a per-node seed.
    pub counts: [usize; 3],
}

impl JigObserver<'_> {
    fn fault(&self, node_seed: u64) -> JigFault {
        let mut rng = ChaCha8Rng::seed_from_u64(node_seed ^ 0xfa17);
        let u: f64 = rng.random();
        if u < self.params.occlusion_rate {
            JigFault::Occluded
        } else if u < self.params.occlusion_rate + self.params.double_marker_rate {
            JigFault::DoubleMarker
        } else {
            JigFault::None
        }
    }
}

impl CorrespondenceSource for JigObserver<'_> {
    fn observe(
        &mut self,
        index: [usize; 3],
        robot_point: [f64; 3],
    ) -> Result<[f64; 3], ImageError> {
        let [nx, ny, _] = self.counts;
        let flat = ((index[2] * ny + index[1]) * nx + index[0]) as u64;
        let node_seed = derive_seed(self.seed, flat);
        let capture = simulate_jig_capture(
            self.world,
            robot_point,
            &self.params,
            self.fault(node_seed),
            node_seed,
        )?;
        measure_marker(&capture, &self.params)
    }
}

/// Drives the jig through every node of `volume` and records the lattice.
pub fn collect_correspondences(
    world: &TrueWorldModel,
    volume: &WorkVolume,
    params: &CaptureParams,
    seed: u64,
    max_missing_fraction: f64,
) -> Result<CalibrationLattice, CalibError> {
    let counts = volume.counts()?;
    let mut observer = JigObserver {
        world,
        params: *params,
        seed,
        counts,
    };
    collect_with(volume, &mut observer, max_missing_fraction)
}
