#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::{GroundTruth, WorkVolume};
use crate::camera::{CameraError, CameraIntrinsics};
use crate::imgproc::Point2;
use crate::linalg::{add3, mat3_mul, mat3_vec, norm3, rotation_xyz, sub3, transpose3};

pub const SENSOR_WIDTH: usize = 6600;
pub const SENSOR_HEIGHT: usize = 3200;
pub const DEFAULT_FOCAL: f64 = 7500.0;

/// `k1` that displaces the sensor corner by `shift_px` (with `k2 = 0`).
pub fn k1_for_corner_shift(fx: f64, cx: f64, cy: f64, shift_px: f64) -> f64 {
    let r = (cx * cx + cy * cy).sqrt() / fx;
    shift_px / (fx * r * r * r)
}

/// 7500 px focal length (0.2 mm per pixel at 1500 mm) with about 3 px of
/// radial distortion in the sensor corners.
pub fn default_intrinsics() -> CameraIntrinsics {
    let (cx, cy) = (SENSOR_WIDTH as f64 / 2.0, SENSOR_HEIGHT as f64 / 2.0);
    CameraIntrinsics {
        fx: DEFAULT_FOCAL,
        fy: DEFAULT_FOCAL,
        cx,
        cy,
        k1: k1_for_corner_shift(DEFAULT_FOCAL, cx, cy, 3.0),
        k2: 0.0,
    }
}

/// Settings from which a [`TrueWorldModel`] is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub intrinsics: CameraIntrinsics,
    /// Robot volume the camera is aimed at.
    pub volume: WorkVolume,
    /// Camera range to the volume center, mm.
    pub working_distance: f64,
    pub depth_noise_sigma: f64,
    /// Measured range is `depth_scale · z + depth_offset`.
    pub depth_scale: f64,
    pub depth_offset: f64,
    /// Bound on each random camera tilt angle, degrees.
    pub rotation_jitter_deg: f64,
    /// Bound on each random camera position offset, mm.
    pub translation_jitter_mm: f64,
    /// Sum of sinusoid amplitudes per axis, mm.
    pub deflection_amplitude: f64,
    pub deflection_terms: usize,
    pub min_period_mm: f64,
    pub max_period_mm: f64,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            intrinsics: default_intrinsics(),
            volume: WorkVolume::default(),
            working_distance: 1500.0,
            depth_noise_sigma: 0.281,
            depth_scale: 1.0015,
            depth_offset: 0.6,
            rotation_jitter_deg: 1.0,
            translation_jitter_mm: 5.0,
            deflection_amplitude: 1.5,
            deflection_terms: 3,
            min_period_mm: 600.0,
            max_period_mm: 1200.0,
            seed: 0,
        }
    }
}

impl WorldParams {
    /// No distortion, deflection, range offset or noise: the measured camera
    /// point is an exact affine function of the robot command.
    pub fn affine_only(seed: u64) -> Self {
        let mut intrinsics = default_intrinsics();
        intrinsics.k1 = 0.0;
        Self {
            intrinsics,
            depth_noise_sigma: 0.0,
            depth_offset: 0.0,
            deflection_amplitude: 0.0,
            seed,
            ..Self::default()
        }
    }
}

/// One plane-wave term `amp · sin(k·r + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub k: [f64; 3],
    pub phase: f64,
    pub amp: f64,
}

impl Sinusoid {
    fn eval(&self, r: [f64; 3]) -> f64 {
        self.amp * (self.k[0] * r[0] + self.k[1] * r[1] + self.k[2] * r[2] + self.phase).sin()
    }
}

/// Ground-truth relation between robot commands and camera measurements.
///
/// Commanding the robot to `r` puts the tool at `r + d(r)` (structural
/// deflection). The camera sees that point through a rigid transform, radial
/// distortion and an affine range error; the measured camera point is the
/// pinhole back-projection of the distorted pixel at the measured range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueWorldModel {
    pub params: WorldParams,
    /// Robot → camera rotation.
    pub rotation: [[f64; 3]; 3],
    /// Camera center in the robot frame.
    pub camera_center: [f64; 3],
    pub deflection: [Vec<Sinusoid>; 3],
}

impl TrueWorldModel {
    pub fn new(params: WorldParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let jit = params.rotation_jitter_deg.to_radians();
        let mut angle = || {
            if jit > 0.0 {
                rng.random_range(-jit..=jit)
            } else {
                0.0
            }
        };
        let (rx, ry, rz) = (angle(), angle(), angle());
        // Camera looks down the robot −z axis; image x along robot x.
        let base = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        let rotation = mat3_mul(&rotation_xyz(rx, ry, rz), &base);
        let v = &params.volume;
        let tj = params.translation_jitter_mm;
        let mut offset = || {
            if tj > 0.0 {
                rng.random_range(-tj..=tj)
            } else {
                0.0
            }
        };
        let center: [f64; 3] = core::array::from_fn(|a| v.origin[a] + v.extents[a] / 2.0);
        // Place the camera so the volume center sits on the optical axis at the working distance.
        let axis_in_robot = mat3_vec(&transpose3(&rotation), [0.0, 0.0, 1.0]);
        let camera_center = [
            center[0] - params.working_distance * axis_in_robot[0] + offset(),
            center[1] - params.working_distance * axis_in_robot[1] + offset(),
            center[2] - params.working_distance * axis_in_robot[2] + offset(),
        ];
        let deflection = core::array::from_fn(|_| {
            let n = params.deflection_terms;
            if params.deflection_amplitude == 0.0 || n == 0 {
                return Vec::new();
            }
            let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
            let total: f64 = weights.iter().sum();
            weights
                .iter()
                .map(|w| {
                    let period = rng.random_range(params.min_period_mm..=params.max_period_mm);
                    let dir = random_unit(&mut rng);
                    let kmag = 2.0 * core::f64::consts::PI / period;
                    Sinusoid {
                        k: dir.map(|d| d * kmag),
                        phase: rng.random_range(0.0..2.0 * core::f64::consts::PI),
                        amp: params.deflection_amplitude * w / total,
                    }
                })
                .collect()
        });
        Self {
            params,
            rotation,
            camera_center,
            deflection,
        }
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.params.intrinsics
    }

    /// Tool displacement from the commanded point.
    pub fn deflection_at(&self, r: [f64; 3]) -> [f64; 3] {
        core::array::from_fn(|a| self.deflection[a].iter().map(|s| s.eval(r)).sum())
    }

    /// Upper bound on any second derivative of the deflection field, 1/mm.
    pub fn deflection_curvature_bound(&self) -> f64 {
        self.deflection
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .map(|s| s.amp * norm3(s.k).powi(2))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// True camera-frame position of the tool for a robot command.
    pub fn tool_in_camera(&self, r: [f64; 3]) -> [f64; 3] {
        let p = add3(r, self.deflection_at(r));
        mat3_vec(&self.rotation, sub3(p, self.camera_center))
    }

    pub fn measured_range(&self, z: f64) -> f64 {
        self.params.depth_scale * z + self.params.depth_offset
    }

    /// Distorted pixel and measured range of a true camera point.
    pub fn observe_point(&self, pc: [f64; 3]) -> Result<(Point2, f64), CameraError> {
        let (px, z) = self.intrinsics().project(pc)?;
        Ok((px, self.measured_range(z)))
    }

    /// Noise-free measured camera point of the tool for robot command `r`.
    pub fn robot_to_camera(&self, r: [f64; 3]) -> Result<[f64; 3], CameraError> {
        let (px, zm) = self.observe_point(self.tool_in_camera(r))?;
        Ok(self.intrinsics().back_project_pinhole(px, zm))
    }

    /// Robot command that brings the tool to measured camera point `c`:
    /// the exact inverse of [`robot_to_camera`](Self::robot_to_camera).
    pub fn forward_map(&self, c: [f64; 3]) -> Result<[f64; 3], CameraError> {
        let intr = self.intrinsics();
        let px = intr.project_pinhole(c);
        let z = (c[2] - self.params.depth_offset) / self.params.depth_scale;
        let pc = intr.back_project(px, z)?;
        let p = add3(
            mat3_vec(&transpose3(&self.rotation), pc),
            self.camera_center,
        );
        // r + d(r) = p; d is a contraction (Lipschitz ≪ 1).
        let mut r = p;
        for _ in 0..100 {
            let next = sub3(p, self.deflection_at(r));
            let step = norm3(sub3(next, r));
            r = next;
            if step < 1e-13 {
                break;
            }
        }
        Ok(r)
    }
}

impl GroundTruth for TrueWorldModel {
    fn robot_to_camera(&self, robot: [f64; 3]) -> [f64; 3] {
        TrueWorldModel::robot_to_camera(self, robot).expect("robot point outside the camera model")
    }

    fn camera_to_robot(&self, camera: [f64; 3]) -> [f64; 3] {
        self.forward_map(camera)
            .expect("camera point outside the camera model")
    }
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = norm3(v);
        if n > 0.1 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}
