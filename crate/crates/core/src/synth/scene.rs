#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::noise::{derive_seed, fractal_noise, value_noise};
use super::world::TrueWorldModel;
use crate::camera::{CameraError, CameraIntrinsics};
use crate::detect::{DepthMap, RgbdImage};
use crate::fcn::{LabeledPatch, PATCH_SIZE};
use crate::imgproc::{to_grayscale, BinaryMask, Point2, RgbImage};
use crate::util::smoothstep;

/// Height of a screw head above the panel, mm.
pub const HEAD_RELIEF_MM: f64 = 5.0;
/// Head radius that images to about 11 px at 1500 mm with the default camera.
pub const NOMINAL_HEAD_RADIUS_MM: f64 = 2.2;

const SHADOW_OUTER: f64 = 1.18;
const ARM_HALF_LENGTH: f64 = 0.6;
const ARM_HALF_WIDTH: f64 = 0.11;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Degradation {
    pub rust_level: f64,
    pub dirt_level: f64,
    pub occlusion_fraction: f64,
}

/// One screw on the panel. Lengths in mm on the panel plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScrewSpec {
    /// Head center in camera X/Y on the panel plane.
    pub center: [f64; 2],
    pub head_radius: f64,
    /// Cross orientation.
    pub rotation_deg: f64,
    pub tilt_deg: f64,
    /// Direction in the image along which the tilted head is foreshortened.
    pub tilt_axis_deg: f64,
    pub degradation: Degradation,
    /// Recess center relative to the head center, head frame (deformation).
    pub recess_offset: [f64; 2],
    /// Where the occluded sector starts.
    pub occlusion_start_deg: f64,
}

impl ScrewSpec {
    pub fn nominal(center: [f64; 2]) -> Self {
        Self {
            center,
            head_radius: NOMINAL_HEAD_RADIUS_MM,
            rotation_deg: 0.0,
            tilt_deg: 0.0,
            tilt_axis_deg: 0.0,
            degradation: Degradation::default(),
            recess_offset: [0.0; 2],
            occlusion_start_deg: 0.0,
        }
    }

    pub fn within(&self, env: &Envelope) -> bool {
        let d = &self.degradation;
        self.rotation_deg.abs() <= env.max_rotation_deg
            && self.tilt_deg.abs() <= env.max_tilt_deg
            && d.rust_level <= env.max_rust
            && d.dirt_level <= env.max_dirt
            && d.occlusion_fraction <= env.max_occlusion
            && self.recess_offset[0].hypot(self.recess_offset[1]) <= env.max_recess_offset
    }

    /// Head-local frame → panel offset.
    fn local_to_panel(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (sa, ca) = self.tilt_axis_deg.to_radians().sin_cos();
        let k = 1.0 - self.tilt_deg.to_radians().cos();
        // (I − k a aᵀ) · Rot(θ)
        let comp = [
            [1.0 - k * ca * ca, -k * ca * sa],
            [-k * ca * sa, 1.0 - k * sa * sa],
        ];
        let rot = [[c, -s], [s, c]];
        mul2(&comp, &rot)
    }

    fn panel_to_local(&self) -> [[f64; 2]; 2] {
        inv2(&self.local_to_panel())
    }

    /// Recess center on the panel plane; this is the manipulation target.
    pub fn recess_center(&self) -> [f64; 2] {
        let m = self.local_to_panel();
        let o = apply2(&m, self.recess_offset);
        [self.center[0] + o[0], self.center[1] + o[1]]
    }
}

fn mul2(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    core::array::from_fn(|i| core::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j]))
}

fn inv2(m: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

fn apply2(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

/// Operating envelope a screw must satisfy to count as in-spec.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Envelope {
    pub max_rotation_deg: f64,
    pub max_tilt_deg: f64,
    pub max_rust: f64,
    pub max_dirt: f64,
    pub max_occlusion: f64,
    pub max_recess_offset: f64,
}

impl Default for Envelope {
    fn default() -> Self {
        Self {
            max_rotation_deg: 4.0,
            max_tilt_deg: 6.0,
            max_rust: 0.6,
            max_dirt: 0.6,
            max_occlusion: 0.15,
            max_recess_offset: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfuserKind {
    /// Domed head without a recess.
    Rivet,
    /// Empty screw hole.
    Hole,
    /// Rust or grease stain.
    Stain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfuserSpec {
    pub kind: ConfuserKind,
    pub center: [f64; 2],
    pub radius: f64,
    pub angle_deg: f64,
}

/// A fronto-parallel panel seen through a camera window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Camera of this image (already offset for the window).
    pub intrinsics: CameraIntrinsics,
    /// True range of the panel plane, mm.
    pub panel_depth: f64,
    /// Measured range is `depth_scale · z + depth_offset` plus noise.
    pub depth_scale: f64,
    pub depth_offset: f64,
    pub depth_noise_sigma: f64,
    /// Share of depth pixels dropped to NaN.
    pub nan_fraction: f64,
    pub rgb_noise_sigma: f64,
    pub panel_color: [f64; 3],
    /// `[base, gradient_x, gradient_y]`, gradients per 40 mm.
    pub illumination: [f64; 3],
    pub screws: Vec<ScrewSpec>,
    pub confusers: Vec<ConfuserSpec>,
    /// Samples per pixel side for antialiasing.
    pub supersample: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScrewTruth {
    /// Recess center in image pixels.
    pub pixel: Point2,
    /// Measured camera point of the recess center on the head top.
    pub camera_point: [f64; 3],
    pub in_spec: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfuserTruth {
    pub kind: ConfuserKind,
    pub pixel: Point2,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneTruth {
    pub screws: Vec<ScrewTruth>,
    pub confusers: Vec<ConfuserTruth>,
}

/// Object appearance evaluated on the panel plane.
struct Shader<'a> {
    spec: &'a SceneSpec,
    screw_frames: Vec<[[f64; 2]; 2]>,
    texture_seed: u64,
    /// Lighting gradients are relative to the image center.
    light_center: [f64; 2],
}

fn mix3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    core::array::from_fn(|i| a[i] + (b[i] - a[i]) * t)
}

fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    a.map(|v| v * s)
}

const RUST: [f64; 3] = [0.55, 0.32, 0.17];
const DIRT: [f64; 3] = [0.52, 0.47, 0.39];
const GRIME: [f64; 3] = [0.66, 0.63, 0.58];
const RECESS: [f64; 3] = [0.12, 0.12, 0.13];

impl<'a> Shader<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        Self {
            spec,
            screw_frames: spec.screws.iter().map(ScrewSpec::panel_to_local).collect(),
            texture_seed: derive_seed(spec.seed, 0x7e47),
            light_center: spec.panel_point(spec.width as f64 / 2.0, spec.height as f64 / 2.0),
        }
    }

    fn panel(&self, p: [f64; 2]) -> [f64; 3] {
        let n = fractal_noise(self.texture_seed, p[0], p[1], 3.0);
        let grain = value_noise(self.texture_seed ^ 0x55, p[0], p[1], 0.15);
        scale3(self.spec.panel_color, 0.9 + 0.14 * n + 0.05 * grain)
    }

    fn illumination(&self, p: [f64; 2]) -> f64 {
        let [base, gx, gy] = self.spec.illumination;
        let [cx, cy] = self.light_center;
        (base * (1.0 + gx * (p[0] - cx) / 40.0 + gy * (p[1] - cy) / 40.0)).max(0.05)
    }

    fn color(&self, p: [f64; 2]) -> [f64; 3] {
        let mut c = self.panel(p);
        for (i, s) in self.spec.screws.iter().enumerate() {
            let d = [p[0] - s.center[0], p[1] - s.center[1]];
            let reach = SHADOW_OUTER * s.head_radius * 1.2;
            if d[0].abs() > reach || d[1].abs() > reach {
                continue;
            }
            let q = apply2(&self.screw_frames[i], d);
            if let Some(v) = self.screw(s, i, q, c) {
                c = v;
            }
        }
        for (i, f) in self.spec.confusers.iter().enumerate() {
            let d = [p[0] - f.center[0], p[1] - f.center[1]];
            let reach = SHADOW_OUTER * f.radius * 1.45;
            if d[0].abs() > reach || d[1].abs() > reach {
                continue;
            }
            if let Some(v) = self.confuser(f, i, d, c) {
                c = v;
            }
        }
        scale3(c, self.illumination(p))
    }

    fn screw(&self, s: &ScrewSpec, i: usize, q: [f64; 2], under: [f64; 3]) -> Option<[f64; 3]> {
        let r = s.head_radius;
        let rho = q[0].hypot(q[1]) / r;
        if rho > SHADOW_OUTER {
            return None;
        }
        let deg = &s.degradation;
        let seed = derive_seed(self.texture_seed, 1000 + i as u64);
        if deg.occlusion_fraction > 0.0 && rho <= 1.1 {
            let phi = q[1].atan2(q[0]) - s.occlusion_start_deg.to_radians();
            let phi = num_traits::Euclid::rem_euclid(&phi, &(2.0 * core::f64::consts::PI));
            if phi < 2.0 * core::f64::consts::PI * deg.occlusion_fraction {
                let n = value_noise(seed ^ 0x0cc1, q[0], q[1], 0.3);
                return Some(scale3(GRIME, 0.9 + 0.2 * n));
            }
        }
        if rho > 1.0 {
            return Some(scale3(
                under,
                0.4 + 0.6 * smoothstep(1.0, SHADOW_OUTER, rho),
            ));
        }
        let metal = 0.85 - 0.35 * rho.powi(4) + 0.04 * q[0] / r;
        let mut c = [metal * 0.97, metal * 0.98, metal];
        if deg.rust_level > 0.0 {
            let n = value_noise(seed, q[0], q[1], 0.25);
            let alpha = (deg.rust_level * (0.3 + 0.9 * (n - 0.3))).clamp(0.0, 1.0);
            c = mix3(c, scale3(RUST, 0.6 + 0.5 * n), alpha);
        }
        let a = q[0] - s.recess_offset[0];
        let b = q[1] - s.recess_offset[1];
        let (au, bu) = (a.abs() / r, b.abs() / r);
        let in_cross = (au <= ARM_HALF_WIDTH && bu <= ARM_HALF_LENGTH)
            || (bu <= ARM_HALF_WIDTH && au <= ARM_HALF_LENGTH);
        if in_cross || a.hypot(b) <= 0.16 * r {
            c = mix3(RECESS, DIRT, 0.9 * deg.dirt_level.clamp(0.0, 1.0));
        }
        Some(c)
    }

    fn confuser(
        &self,
        f: &ConfuserSpec,
        i: usize,
        d: [f64; 2],
        under: [f64; 3],
    ) -> Option<[f64; 3]> {
        let r = f.radius;
        let seed = derive_seed(self.texture_seed, 5000 + i as u64);
        let rho = d[0].hypot(d[1]) / r;
        let (s, c) = f.angle_deg.to_radians().sin_cos();
        match f.kind {
            ConfuserKind::Rivet => {
                if rho > SHADOW_OUTER {
                    return None;
                }
                if rho > 1.0 {
                    return Some(scale3(
                        under,
                        0.45 + 0.55 * smoothstep(1.0, SHADOW_OUTER, rho),
                    ));
                }
                let h = [-0.3 * r * c + 0.3 * r * s, -0.3 * r * s - 0.3 * r * c];
                let hd = ((d[0] - h[0]).powi(2) + (d[1] - h[1]).powi(2)) / (0.3 * r).powi(2);
                let v = 0.42 + 0.3 * (1.0 - rho * rho).max(0.0).sqrt() + 0.3 * (-hd).exp();
                Some([v * 0.98, v * 0.98, v])
            }
            ConfuserKind::Hole => {
                if rho > 1.15 {
                    return None;
                }
                if rho > 1.0 {
                    return Some(scale3(under, 1.15));
                }
                let v = 0.05 + 0.06 * smoothstep(0.6, 1.0, rho);
                Some([v, v, v * 1.05])
            }
            ConfuserKind::Stain => {
                let phi = d[1].atan2(d[0]);
                let a = f.angle_deg.to_radians();
                let edge = 1.0 + 0.25 * (3.0 * phi + a).sin() + 0.15 * (5.0 * phi + 2.0 * a).sin();
                if rho > edge {
                    return None;
                }
                let n = value_noise(seed, d[0], d[1], 0.4);
                let alpha = 0.75 * (0.6 + 0.4 * n) * smoothstep(edge, 0.8 * edge, rho);
                Some(mix3(under, scale3(RUST, 0.8 + 0.3 * n), alpha))
            }
        }
    }

    /// True range at a panel point.
    fn range(&self, p: [f64; 2]) -> f64 {
        let z0 = self.spec.panel_depth;
        for (i, s) in self.spec.screws.iter().enumerate() {
            let d = [p[0] - s.center[0], p[1] - s.center[1]];
            let q = apply2(&self.screw_frames[i], d);
            let rho = q[0].hypot(q[1]) / s.head_radius;
            if rho < 1.1 {
                return z0 - HEAD_RELIEF_MM * smoothstep(1.1, 0.85, rho);
            }
        }
        for f in &self.spec.confusers {
            let rho = (p[0] - f.center[0]).hypot(p[1] - f.center[1]) / f.radius;
            match f.kind {
                ConfuserKind::Rivet if rho < 1.0 => return z0 - 3.0 * (1.0 - rho * rho).sqrt(),
                ConfuserKind::Hole if rho < 1.0 => return z0 + 4.0,
                _ => {}
            }
        }
        z0
    }
}

impl SceneSpec {
    /// Panel-plane point seen at image position `(x, y)` (pixel units).
    pub fn panel_point(&self, x: f64, y: f64) -> [f64; 2] {
        let k = &self.intrinsics;
        let (xn, yn) = k
            .undistort((x - k.cx) / k.fx, (y - k.cy) / k.fy)
            .unwrap_or(((x - k.cx) / k.fx, (y - k.cy) / k.fy));
        [xn * self.panel_depth, yn * self.panel_depth]
    }

    /// Image position of a panel-plane point.
    pub fn pixel_of(&self, p: [f64; 2]) -> Point2 {
        self.intrinsics
            .project([p[0], p[1], self.panel_depth])
            .map(|(px, _)| px)
            .expect("panel depth is positive")
    }

    pub fn measured_range(&self, z: f64) -> f64 {
        self.depth_scale * z + self.depth_offset
    }

    pub fn truth(&self, env: &Envelope) -> SceneTruth {
        let screws = self
            .screws
            .iter()
            .map(|s| {
                let pixel = self.pixel_of(s.recess_center());
                let top = self.measured_range(self.panel_depth - HEAD_RELIEF_MM);
                ScrewTruth {
                    pixel,
                    camera_point: self.intrinsics.back_project_pinhole(pixel, top),
                    in_spec: s.within(env),
                }
            })
            .collect();
        let confusers = self
            .confusers
            .iter()
            .map(|f| ConfuserTruth {
                kind: f.kind,
                pixel: self.pixel_of(f.center),
            })
            .collect();
        SceneTruth { screws, confusers }
    }

    /// Pixels whose centers fall on a screw head.
    pub fn screw_mask(&self) -> BinaryMask {
        let frames: Vec<_> = self.screws.iter().map(ScrewSpec::panel_to_local).collect();
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            let p = self.panel_point(x as f64 + 0.5, y as f64 + 0.5);
            self.screws.iter().zip(&frames).any(|(s, m)| {
                let q = apply2(m, [p[0] - s.center[0], p[1] - s.center[1]]);
                q[0].hypot(q[1]) <= s.head_radius
            })
        })
    }
}

/// Renders color and depth. Deterministic in `spec` (including its seed).
pub fn render_scene(spec: &SceneSpec, env: &Envelope) -> (RgbdImage, SceneTruth) {
    let shader = Shader::new(spec);
    let (w, h) = (spec.width, spec.height);
    let ss = spec.supersample.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0xd3a7));
    let rgb_noise = Normal::new(0.0, spec.rgb_noise_sigma.max(0.0)).expect("finite sigma");
    let depth_noise = Normal::new(0.0, spec.depth_noise_sigma.max(0.0)).expect("finite sigma");

    let mut rgb = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let px = x as f64 + (sx as f64 + 0.5) / ss as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / ss as f64;
                    let c = shader.color(spec.panel_point(px, py));
                    for i in 0..3 {
                        acc[i] += c[i];
                    }
                }
            }
            let n = (ss * ss) as f64;
            let mut c = acc.map(|v| v / n);
            if spec.rgb_noise_sigma > 0.0 {
                for v in &mut c {
                    *v += rgb_noise.sample(&mut rng);
                }
            }
            rgb.push(c.map(|v| v.clamp(0.0, 1.0)));

            let z = shader.range(spec.panel_point(x as f64 + 0.5, y as f64 + 0.5));
            let mut zm = spec.measured_range(z);
            if spec.depth_noise_sigma > 0.0 {
                zm += depth_noise.sample(&mut rng);
            }
            if spec.nan_fraction > 0.0 && rng.random::<f64>() < spec.nan_fraction {
                zm = f64::NAN;
            }
            depth.push(zm);
        }
    }
    let rgb = RgbImage::new(w, h, rgb).expect("clamped pixels");
    let depth = DepthMap::new(w, h, depth).expect("sizes consistent");
    let img = RgbdImage::new(rgb, depth).expect("same size");
    (img, spec.truth(env))
}

/// Ranges used when drawing random screws, confusers and panels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneRanges {
    /// Envelope the screws are drawn from.
    pub draw: Envelope,
    /// Probability that each degradation is present at all.
    pub degradation_rate: f64,
    /// Base orientation of the cross is uniform in ±this.
    pub base_rotation_deg: f64,
    pub rgb_noise_sigma: f64,
    pub depth_noise_sigma: f64,
    pub nan_fraction: f64,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            draw: Envelope::default(),
            degradation_rate: 0.5,
            base_rotation_deg: 0.0,
            rgb_noise_sigma: 0.01,
            depth_noise_sigma: 0.281,
            nan_fraction: 0.002,
        }
    }
}

impl SceneRanges {
    /// Everything pristine.
    pub fn clean() -> Self {
        Self {
            degradation_rate: 0.0,
            ..Self::default()
        }
    }

    /// Outside the operating envelope: steep tilt and heavy occlusion.
    pub fn out_of_spec() -> Self {
        Self {
            draw: Envelope {
                max_tilt_deg: 15.0,
                max_occlusion: 0.9,
                ..Envelope::default()
            },
            degradation_rate: 0.8,
            ..Self::default()
        }
    }
}

fn maybe(rng: &mut impl Rng, rate: f64, hi: f64) -> f64 {
    if hi > 0.0 && rng.random_bool(rate.clamp(0.0, 1.0)) {
        rng.random_range(0.0..=hi)
    } else {
        0.0
    }
}

/// Random screw at `center` (mm) drawn from `ranges`, with radius scaled by `size`.
pub fn random_screw(
    rng: &mut impl Rng,
    ranges: &SceneRanges,
    center: [f64; 2],
    size: f64,
) -> ScrewSpec {
    let e = &ranges.draw;
    let base = if ranges.base_rotation_deg > 0.0 {
        rng.random_range(-ranges.base_rotation_deg..=ranges.base_rotation_deg)
    } else {
        0.0
    };
    let rate = ranges.degradation_rate;
    let off_r = maybe(rng, rate, e.max_recess_offset);
    let off_a = rng.random_range(0.0..2.0 * core::f64::consts::PI);
    ScrewSpec {
        center,
        head_radius: NOMINAL_HEAD_RADIUS_MM * size * rng.random_range(0.93..1.07),
        rotation_deg: base + rng.random_range(-e.max_rotation_deg..=e.max_rotation_deg),
        tilt_deg: rng.random_range(0.0..=e.max_tilt_deg),
        tilt_axis_deg: rng.random_range(0.0..180.0),
        degradation: Degradation {
            rust_level: maybe(rng, rate, e.max_rust),
            dirt_level: maybe(rng, rate, e.max_dirt),
            occlusion_fraction: maybe(rng, rate * 0.5, e.max_occlusion),
        },
        recess_offset: [off_r * off_a.cos(), off_r * off_a.sin()],
        occlusion_start_deg: rng.random_range(0.0..360.0),
    }
}

pub fn random_confuser(rng: &mut impl Rng, center: [f64; 2], size: f64) -> ConfuserSpec {
    let kind = match rng.random_range(0..10) {
        0..=4 => ConfuserKind::Rivet,
        5..=7 => ConfuserKind::Hole,
        _ => ConfuserKind::Stain,
    };
    random_confuser_of(rng, kind, center, size)
}

pub fn random_confuser_of(
    rng: &mut impl Rng,
    kind: ConfuserKind,
    center: [f64; 2],
    size: f64,
) -> ConfuserSpec {
    let radius = NOMINAL_HEAD_RADIUS_MM
        * size
        * match kind {
            ConfuserKind::Rivet => rng.random_range(0.8..1.15),
            ConfuserKind::Hole => rng.random_range(0.55..0.95),
            ConfuserKind::Stain => rng.random_range(0.7..1.4),
        };
    ConfuserSpec {
        kind,
        center,
        radius,
        angle_deg: rng.random_range(0.0..360.0),
    }
}

const PANEL_COLORS: [[f64; 3]; 5] = [
    [0.62, 0.62, 0.60],
    [0.74, 0.75, 0.77],
    [0.45, 0.50, 0.58],
    [0.33, 0.33, 0.35],
    [0.58, 0.55, 0.48],
];

fn random_panel(rng: &mut impl Rng) -> ([f64; 3], [f64; 3]) {
    let base = PANEL_COLORS[rng.random_range(0..PANEL_COLORS.len())];
    let tint = rng.random_range(0.92..1.08);
    let illum = [
        rng.random_range(0.8..1.15),
        rng.random_range(-0.12..0.12),
        rng.random_range(-0.12..0.12),
    ];
    (base.map(|c| (c * tint).min(0.95)), illum)
}

/// Layout of a TEG-style evaluation frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TegLayout {
    pub width: usize,
    pub height: usize,
    pub screws: usize,
    pub confusers: usize,
    /// Objects sit on a jittered grid with this cell size, pixels.
    pub cell: usize,
    /// Minimum distance of an object center from the border, pixels.
    pub margin: usize,
    pub panel_depth: f64,
}

impl Default for TegLayout {
    fn default() -> Self {
        Self {
            width: 384,
            height: 288,
            screws: 20,
            confusers: 5,
            cell: 48,
            margin: 20,
            panel_depth: 1500.0,
        }
    }
}

/// Random evaluation frame: screws and confusers on a jittered grid, viewed
/// through a window placed at random on the sensor of `camera`.
pub fn teg_scene(
    camera: &CameraIntrinsics,
    sensor: [usize; 2],
    layout: &TegLayout,
    ranges: &SceneRanges,
    seed: u64,
) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ox = rng.random_range(0..=sensor[0].saturating_sub(layout.width)) as f64;
    let oy = rng.random_range(0..=sensor[1].saturating_sub(layout.height)) as f64;
    let (panel_color, illumination) = random_panel(&mut rng);
    let mut spec = SceneSpec {
        width: layout.width,
        height: layout.height,
        intrinsics: camera.cropped(ox, oy),
        panel_depth: layout.panel_depth,
        depth_scale: 1.0,
        depth_offset: 0.0,
        depth_noise_sigma: ranges.depth_noise_sigma,
        nan_fraction: ranges.nan_fraction,
        rgb_noise_sigma: ranges.rgb_noise_sigma,
        panel_color,
        illumination,
        screws: Vec::new(),
        confusers: Vec::new(),
        supersample: 3,
        seed,
    };
    let (cols, rows) = (layout.width / layout.cell, layout.height / layout.cell);
    let mut cells: Vec<usize> = (0..cols * rows).collect();
    // Partial Fisher-Yates for the first `n` cells.
    let n = (layout.screws + layout.confusers).min(cells.len());
    for i in 0..n {
        let j = rng.random_range(i..cells.len());
        cells.swap(i, j);
    }
    let size = 1500.0 / layout.panel_depth * camera.fx / 7500.0;
    let jitter = (layout.cell as f64 / 2.0 - layout.margin as f64).clamp(0.0, 4.0);
    for (slot, &cell) in cells[..n].iter().enumerate() {
        let (cx, cy) = ((cell % cols) * layout.cell, (cell / cols) * layout.cell);
        let px = cx as f64 + layout.cell as f64 / 2.0 + rng.random_range(-1.0..=1.0) * jitter;
        let py = cy as f64 + layout.cell as f64 / 2.0 + rng.random_range(-1.0..=1.0) * jitter;
        let center = spec.panel_point(px, py);
        if slot < layout.screws {
            let s = random_screw(&mut rng, ranges, [0.0; 2], 1.0 / size.max(1e-9));
            // Place the recess (not the head) on the grid point.
            let mut s = s;
            let rc = s.recess_center();
            s.center = [center[0] - rc[0], center[1] - rc[1]];
            spec.screws.push(s);
        } else {
            spec.confusers
                .push(random_confuser(&mut rng, center, 1.0 / size.max(1e-9)));
        }
    }
    spec
}

/// What a training patch shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchContent {
    Screw,
    Confuser(ConfuserKind),
    Panel,
}

/// Relative frequencies of negative patch contents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeMix {
    pub panel: f64,
    pub rivet: f64,
    pub hole: f64,
    pub stain: f64,
}

impl NegativeMix {
    /// Mostly plain panel and assorted confusers.
    pub const BROAD: NegativeMix = NegativeMix {
        panel: 0.3,
        rivet: 0.35,
        hole: 0.2,
        stain: 0.15,
    };
    /// Dominated by rivets, the confuser closest to a screw head.
    pub const CONFUSER_RICH: NegativeMix = NegativeMix {
        panel: 0.1,
        rivet: 0.6,
        hole: 0.2,
        stain: 0.1,
    };

    pub fn sample(&self, rng: &mut impl Rng) -> PatchContent {
        let total = self.panel + self.rivet + self.hole + self.stain;
        let u = rng.random::<f64>() * total;
        if u < self.panel {
            PatchContent::Panel
        } else if u < self.panel + self.rivet {
            PatchContent::Confuser(ConfuserKind::Rivet)
        } else if u < self.panel + self.rivet + self.hole {
            PatchContent::Confuser(ConfuserKind::Hole)
        } else {
            PatchContent::Confuser(ConfuserKind::Stain)
        }
    }
}

/// 34×34 patch showing `content`. For a screw, `spec` is drawn as given; for a
/// confuser only its center and size are used. `spec.center` is the offset from
/// the patch center in mm; panel, lighting, range and neighbours come from the seed.
pub fn render_patch_rgb(
    spec: &ScrewSpec,
    content: PatchContent,
    seed: u64,
) -> (RgbImage, BinaryMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = PATCH_SIZE;
    let depth = rng.random_range(1150.0..1850.0);
    let (panel_color, illumination) = random_panel(&mut rng);
    let half = n as f64 / 2.0;
    let intr = CameraIntrinsics::pinhole(7500.0, 7500.0, half, half);
    let mut scene = SceneSpec {
        width: n,
        height: n,
        intrinsics: intr,
        panel_depth: depth,
        depth_scale: 1.0,
        depth_offset: 0.0,
        depth_noise_sigma: 0.0,
        nan_fraction: 0.0,
        rgb_noise_sigma: 0.01,
        panel_color,
        illumination,
        screws: Vec::new(),
        confusers: Vec::new(),
        supersample: 3,
        seed,
    };
    let mm = depth / 7500.0;
    let size = spec.head_radius / NOMINAL_HEAD_RADIUS_MM;
    let positive = content == PatchContent::Screw;
    match content {
        PatchContent::Screw => scene.screws.push(*spec),
        PatchContent::Confuser(kind) => {
            scene
                .confusers
                .push(random_confuser_of(&mut rng, kind, spec.center, size))
        }
        PatchContent::Panel => {}
    }
    // Occasional neighbour cut by the patch border.
    if rng.random_bool(0.3) {
        let a = rng.random_range(0.0..2.0 * core::f64::consts::PI);
        let d = rng.random_range(26.0..34.0) * mm;
        let at = [d * a.cos(), d * a.sin()];
        if positive && rng.random_bool(0.5) {
            scene
                .screws
                .push(random_screw(&mut rng, &SceneRanges::default(), at, size));
        } else {
            scene.confusers.push(random_confuser(&mut rng, at, size));
        }
    }
    let (img, _) = render_scene(&scene, &Envelope::default());
    let label = if positive {
        scene.screw_mask()
    } else {
        BinaryMask::from_fn(n, n, |_, _| false)
    };
    (img.rgb().clone(), label)
}

/// Grayscale training patch; see [`render_patch_rgb`].
pub fn render_patch(spec: &ScrewSpec, content: PatchContent, seed: u64) -> LabeledPatch {
    let (rgb, label) = render_patch_rgb(spec, content, seed);
    LabeledPatch::new(to_grayscale(&rgb), label).expect("patch is 34x34")
}

/// Ranges for training screws: a little wider than the operating envelope
/// and with arbitrary cross orientation.
pub fn training_ranges() -> SceneRanges {
    SceneRanges {
        draw: Envelope {
            max_rotation_deg: 0.0,
            max_tilt_deg: 8.0,
            max_rust: 0.7,
            max_dirt: 0.7,
            max_occlusion: 0.2,
            max_recess_offset: 0.35,
        },
        degradation_rate: 0.6,
        base_rotation_deg: 45.0,
        ..SceneRanges::default()
    }
}

/// `n_pos` screw patches followed by `n_neg` background patches drawn from
/// `mix`. With `precision_input` the patches go through the stage-2 tone
/// normalization.
pub fn training_patches(
    n_pos: usize,
    n_neg: usize,
    mix: &NegativeMix,
    precision_input: bool,
    ranges: &SceneRanges,
    seed: u64,
) -> Vec<LabeledPatch> {
    (0..n_pos + n_neg)
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x9a7c);
            let jitter = 3.0 * NOMINAL_HEAD_RADIUS_MM / 11.0;
            let center = [
                rng.random_range(-jitter..=jitter),
                rng.random_range(-jitter..=jitter),
            ];
            let spec = random_screw(&mut rng, ranges, center, 1.0);
            let content = if i < n_pos {
                PatchContent::Screw
            } else {
                mix.sample(&mut rng)
            };
            let (rgb, label) = render_patch_rgb(&spec, content, s);
            let gray = if precision_input {
                crate::detect::stage2_input(&rgb)
            } else {
                to_grayscale(&rgb)
            };
            LabeledPatch::new(gray, label).expect("patch is 34x34")
        })
        .collect()
}

/// Close-up around one screw whose recess sits at robot point `r_true`.
///
/// The panel lies `HEAD_RELIEF_MM` behind the head top; the window is placed
/// around the screw with up to `jitter` px of offset. `screw.center` is ignored.
pub fn unit_tile(
    world: &TrueWorldModel,
    r_true: [f64; 3],
    screw: ScrewSpec,
    size: usize,
    jitter: f64,
    ranges: &SceneRanges,
    seed: u64,
) -> Result<SceneSpec, CameraError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pc = world.tool_in_camera(r_true);
    let (u, _) = world.observe_point(pc)?;
    let jx = if jitter > 0.0 {
        rng.random_range(-jitter..=jitter)
    } else {
        0.0
    };
    let jy = if jitter > 0.0 {
        rng.random_range(-jitter..=jitter)
    } else {
        0.0
    };
    let half = (size / 2) as f64;
    let ox = (u.x + jx).floor() - half;
    let oy = (u.y + jy).floor() - half;
    let (panel_color, illumination) = random_panel(&mut rng);
    let p = &world.params;
    let mut spec = SceneSpec {
        width: size,
        height: size,
        intrinsics: world.intrinsics().cropped(ox, oy),
        panel_depth: pc[2] + HEAD_RELIEF_MM,
        depth_scale: p.depth_scale,
        depth_offset: p.depth_offset,
        depth_noise_sigma: ranges.depth_noise_sigma,
        nan_fraction: ranges.nan_fraction,
        rgb_noise_sigma: ranges.rgb_noise_sigma,
        panel_color,
        illumination,
        screws: Vec::new(),
        confusers: Vec::new(),
        supersample: 3,
        seed,
    };
    let target = spec.panel_point(u.x - ox, u.y - oy);
    let mut s = screw;
    s.center = [0.0; 2];
    let rc = s.recess_center();
    s.center = [target[0] - rc[0], target[1] - rc[1]];
    spec.screws.push(s);
    Ok(spec)
}
