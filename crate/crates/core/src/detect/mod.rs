//! Two-stage screw detection on RGB-D frames.
//!
//! Stage 1 runs a recall-biased classifier over the whole frame and turns the
//! thresholded map into candidate boxes. Stage 2 re-classifies each candidate
//! crop with a precision-biased ensemble. Accepted crops get a sub-pixel
//! center from the head circle and the cross recess, and a 3D point from the
//! depth channel.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::fcn::{forward, FcnError, FcnModel};
use crate::imgproc::{
    auto_gamma, connected_regions, detect_cross_center, detect_outer_circle, equalize_hist,
    gamma_correct, threshold, to_grayscale, BinaryMask, BoundingBox, CircleFit, CircleParams,
    CrossParams, ImageError, Point2, ProbabilityMap, RgbImage,
};
use crate::util::median_in_place;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectError {
    #[error(transparent)]
    Model(#[from] FcnError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("neither head circle nor cross recess found")]
    NoCenter,
    #[error("no valid depth around ({x:.1}, {y:.1})")]
    NoDepth { x: f64, y: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParams(&'static str),
    #[error("rgb {rgb:?} and depth {depth:?} sizes differ")]
    SizeMismatch {
        rgb: (usize, usize),
        depth: (usize, usize),
    },
}

/// Range image in millimetres; NaN marks an invalid sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    /// Non-finite and non-positive samples are stored as NaN.
    pub fn new(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage);
        }
        if data.len() != width * height {
            return Err(ImageError::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        for v in &mut data {
            if !(v.is_finite() && *v > 0.0) {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data).expect("sizes consistent")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn crop(&self, b: &BoundingBox) -> DepthMap {
        assert!(
            b.fits(self.width, self.height),
            "crop box outside depth map"
        );
        let mut data = Vec::with_capacity(b.area());
        for y in b.y..b.y + b.h {
            data.extend_from_slice(&self.data[y * self.width + b.x..y * self.width + b.x + b.w]);
        }
        DepthMap {
            width: b.w,
            height: b.h,
            data,
        }
    }
}

/// Pixel-aligned color and depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbdImage {
    rgb: RgbImage,
    depth: DepthMap,
}

impl RgbdImage {
    pub fn new(rgb: RgbImage, depth: DepthMap) -> Result<Self, DetectError> {
        if (rgb.width(), rgb.height()) != (depth.width(), depth.height()) {
            return Err(DetectError::SizeMismatch {
                rgb: (rgb.width(), rgb.height()),
                depth: (depth.width(), depth.height()),
            });
        }
        Ok(Self { rgb, depth })
    }

    pub fn rgb(&self) -> &RgbImage {
        &self.rgb
    }

    pub fn depth(&self) -> &DepthMap {
        &self.depth
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }
}

/// Separates the color and depth channels.
pub fn split(img: &RgbdImage) -> (RgbImage, DepthMap) {
    (img.rgb.clone(), img.depth.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub tau_coarse: f64,
    pub tau_fine: f64,
    /// Smallest stage-1 component kept, pixels.
    pub min_area: usize,
    /// Fraction of the central disk that must be positive in stage 2.
    pub verify_fraction: f64,
    /// Central-disk radius as a fraction of the crop's smaller side.
    pub central_disk: f64,
    pub fuse_weight_cross: f64,
    /// Side of the depth median window, odd.
    pub depth_window: usize,
    /// Growth applied to each stage-1 component box.
    pub box_padding: usize,
    /// Stage-1 boxes are grown to at least this side (clamped to the frame).
    pub min_box: usize,
    /// Stage-1 boxes whose centers are closer than this are merged.
    pub merge_radius: f64,
    /// Accepted centers closer than this keep only the most confident one.
    pub nms_radius: f64,
    /// Re-estimate the center once on a crop of side `min_box` centered on
    /// the first estimate.
    pub recenter: bool,
    pub circle: CircleParams,
    pub cross: CrossParams,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            tau_coarse: 0.3,
            tau_fine: 0.6,
            min_area: 12,
            verify_fraction: 0.15,
            central_disk: 0.4,
            fuse_weight_cross: 0.7,
            depth_window: 3,
            box_padding: 6,
            min_box: 36,
            merge_radius: 10.0,
            nms_radius: 6.0,
            recenter: true,
            circle: CircleParams::default(),
            cross: CrossParams::default(),
        }
    }
}

impl DetectParams {
    pub fn validate(&self) -> Result<(), DetectError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.tau_coarse) || !unit(self.tau_fine) || !unit(self.fuse_weight_cross) {
            return Err(DetectError::InvalidParams(
                "thresholds and fusion weight must lie in [0, 1]",
            ));
        }
        if !(self.verify_fraction > 0.0 && self.verify_fraction < 1.0) {
            return Err(DetectError::InvalidParams(
                "verify_fraction must lie in (0, 1)",
            ));
        }
        if self.depth_window % 2 == 0 {
            return Err(DetectError::InvalidParams("depth_window must be odd"));
        }
        if !(self.central_disk > 0.0 && self.central_disk <= 0.5) {
            return Err(DetectError::InvalidParams(
                "central_disk must lie in (0, 0.5]",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScrewDetection {
    pub p_global: Point2,
    /// Camera frame, mm.
    pub p_3d: [f64; 3],
    pub confidence: f64,
    /// Stage-1 box the detection came from.
    pub source: BoundingBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Stage 2 did not confirm the candidate.
    Rejected,
    NoCenter,
    NoDepth,
    /// Suppressed by a more confident detection nearby.
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub source: BoundingBox,
    pub reason: DropReason,
    /// Center estimate when one was made before dropping.
    pub p_global: Option<Point2>,
}

/// Result of one frame: detections in row-major order of `p_global`, plus
/// every stage-1 candidate that did not become a detection.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSet {
    pub detections: Vec<ScrewDetection>,
    pub dropped: Vec<DroppedCandidate>,
    pub candidates: usize,
}

/// Stage 1: recall-biased map → threshold → component boxes. Boxes that touch
/// belong to one object (centers within `merge_radius`) are merged, then
/// grown to `min_box`.
pub fn stage1_coarse(
    rgb: &RgbImage,
    model: &FcnModel,
    params: &DetectParams,
) -> Result<Vec<BoundingBox>, DetectError> {
    let map = forward(model, &to_grayscale(rgb))?;
    Ok(boxes_from_map(&map, params))
}

pub(crate) fn boxes_from_map(map: &ProbabilityMap, params: &DetectParams) -> Vec<BoundingBox> {
    let (w, h) = (map.width(), map.height());
    let mask = threshold(map, params.tau_coarse);
    let boxes = connected_regions(&mask, params.min_area, params.box_padding);
    let mut merged: Vec<BoundingBox> = merge_close(boxes, params.merge_radius)
        .into_iter()
        .map(|b| grow_to(b, params.min_box, w, h))
        .collect();
    merged.sort_by_key(|b| (b.y, b.x));
    merged
}

fn grow_to(b: BoundingBox, side: usize, w: usize, h: usize) -> BoundingBox {
    let grow = |start: usize, len: usize, limit: usize| -> (usize, usize) {
        if len >= side || limit <= len {
            return (start, len);
        }
        let target = side.min(limit);
        let extra = target - len;
        let lo = start.saturating_sub(extra / 2);
        let lo = lo.min(limit - target);
        (lo, target)
    };
    let (x, bw) = grow(b.x, b.w, w);
    let (y, bh) = grow(b.y, b.h, h);
    BoundingBox::new(x, y, bw, bh)
}

/// Square of side `side` centered on `p`, shifted to stay inside the frame.
fn centered_box(p: Point2, side: usize, w: usize, h: usize) -> BoundingBox {
    let place = |c: f64, limit: usize| -> (usize, usize) {
        let len = side.min(limit);
        let lo = (c - len as f64 / 2.0).round().max(0.0) as usize;
        (lo.min(limit - len), len)
    };
    let (x, bw) = place(p.x, w);
    let (y, bh) = place(p.y, h);
    BoundingBox::new(x, y, bw, bh)
}

fn box_center(b: &BoundingBox) -> Point2 {
    Point2::new(b.x as f64 + b.w as f64 / 2.0, b.y as f64 + b.h as f64 / 2.0)
}

fn merge_close(mut boxes: Vec<BoundingBox>, radius: f64) -> Vec<BoundingBox> {
    loop {
        let mut changed = false;
        let mut out: Vec<BoundingBox> = Vec::with_capacity(boxes.len());
        for b in boxes {
            if let Some(o) = out
                .iter_mut()
                .find(|o| box_center(o).distance(&box_center(&b)) < radius)
            {
                *o = o.union(&b);
                changed = true;
            } else {
                out.push(b);
            }
        }
        boxes = out;
        if !changed {
            return boxes;
        }
    }
}

/// Crops each box, keeping the box for remapping.
pub fn clip_images(rgb: &RgbImage, boxes: &[BoundingBox]) -> Vec<(RgbImage, BoundingBox)> {
    boxes.iter().map(|b| (rgb.crop(b), *b)).collect()
}

/// Gamma-normalized grayscale input used by the precision ensemble.
pub fn stage2_input(patch: &RgbImage) -> crate::imgproc::GrayImage {
    to_grayscale(&gamma_correct(patch, auto_gamma(patch)))
}

/// Stage 2: ensemble mean on the gamma-normalized crop, thresholded; accepts
/// when enough of the central disk is positive.
pub fn stage2_verify(
    patch: &RgbImage,
    ensemble: &[FcnModel],
    params: &DetectParams,
) -> Result<(bool, BinaryMask), DetectError> {
    let gray = stage2_input(patch);
    let avg = crate::fcn::ensemble_forward(ensemble, &gray)?;
    let mask = threshold(&avg, params.tau_fine);
    Ok((
        central_fraction(&mask, params.central_disk) >= params.verify_fraction,
        mask,
    ))
}

/// Share of positive pixels among those whose centers lie within
/// `radius_fraction · min(w, h)` of the mask center.
pub fn central_fraction(mask: &BinaryMask, radius_fraction: f64) -> f64 {
    let (w, h) = (mask.width(), mask.height());
    let r = radius_fraction * w.min(h) as f64;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (mut n, mut pos) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= r * r {
                n += 1;
                pos += usize::from(mask.get(x, y));
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        pos as f64 / n as f64
    }
}

/// Sub-pixel screw center inside a crop and a confidence in `[0, 1]`.
///
/// The head circle is found on the equalized crop, then the recess centroid
/// inside it. With both, the result is `w·cross + (1 − w)·head`. If the circle
/// search fails the recess is searched around the crop center and used alone.
pub fn estimate_center(
    patch: &RgbImage,
    params: &DetectParams,
) -> Result<(Point2, f64), DetectError> {
    let gray = equalize_hist(&to_grayscale(patch));
    let side = gray.width().min(gray.height());
    let mut circle_params = params.circle;
    circle_params.r_max = circle_params.r_max.min(side.saturating_sub(1) / 2);
    let head = if circle_params.r_max >= circle_params.r_min {
        detect_outer_circle(&gray, &circle_params).ok()
    } else {
        None
    };
    let w = params.fuse_weight_cross;
    match head {
        Some(head) => match detect_cross_center(&gray, &head, &params.cross) {
            Ok(cross) => {
                let p = Point2::new(
                    w * cross.center.x + (1.0 - w) * head.center.x,
                    w * cross.center.y + (1.0 - w) * head.center.y,
                );
                Ok((p, w * cross.score + (1.0 - w) * head.score))
            }
            Err(_) => Ok((head.center, (1.0 - w) * head.score)),
        },
        None => {
            let guess = CircleFit {
                center: Point2::new(gray.width() as f64 / 2.0, gray.height() as f64 / 2.0),
                radius: 0.4 * side as f64,
                score: 0.0,
            };
            let cross = detect_cross_center(&gray, &guess, &params.cross)
                .map_err(|_| DetectError::NoCenter)?;
            Ok((cross.center, w * cross.score))
        }
    }
}

pub fn map_to_global(p_local: Point2, b: &BoundingBox) -> Point2 {
    Point2::new(p_local.x + b.x as f64, p_local.y + b.y as f64)
}

/// Camera point under `p_global` from the median valid depth in a
/// `window × window` neighbourhood, by pinhole back-projection.
pub fn get_3d(
    p_global: Point2,
    depth: &DepthMap,
    intr: &CameraIntrinsics,
    window: usize,
) -> Result<[f64; 3], DetectError> {
    if window % 2 == 0 {
        return Err(DetectError::InvalidParams("depth window must be odd"));
    }
    let (w, h) = (depth.width() as isize, depth.height() as isize);
    let (px, py) = (p_global.x.floor() as isize, p_global.y.floor() as isize);
    let half = (window / 2) as isize;
    let mut samples = Vec::with_capacity(window * window);
    for y in py - half..=py + half {
        for x in px - half..=px + half {
            if x >= 0 && y >= 0 && x < w && y < h {
                let v = depth.get(x as usize, y as usize);
                if v.is_finite() {
                    samples.push(v);
                }
            }
        }
    }
    let z = median_in_place(&mut samples).ok_or(DetectError::NoDepth {
        x: p_global.x,
        y: p_global.y,
    })?;
    Ok(intr.back_project_pinhole(p_global, z))
}

/// The full pipeline on one frame. Per-candidate failures are logged in
/// [`DetectionSet::dropped`] and never abort the frame.
pub fn detect_screws(
    img: &RgbdImage,
    recall_model: &FcnModel,
    ensemble: &[FcnModel],
    intr: &CameraIntrinsics,
    params: &DetectParams,
) -> Result<DetectionSet, DetectError> {
    params.validate()?;
    if ensemble.is_empty() {
        return Err(DetectError::Model(FcnError::ShapeMismatch(
            "empty ensemble",
        )));
    }
    let (rgb, depth) = (img.rgb(), img.depth());
    let boxes = stage1_coarse(rgb, recall_model, params)?;
    let mut out = DetectionSet {
        candidates: boxes.len(),
        ..DetectionSet::default()
    };
    let mut found: Vec<ScrewDetection> = Vec::new();
    for (patch, b) in clip_images(rgb, &boxes) {
        let drop = |reason, p_global| DroppedCandidate {
            source: b,
            reason,
            p_global,
        };
        let accepted = match stage2_verify(&patch, ensemble, params) {
            Ok((ok, _)) => ok,
            Err(DetectError::Model(FcnError::ImageTooSmall { .. })) => false,
            Err(e) => return Err(e),
        };
        if !accepted {
            out.dropped.push(drop(DropReason::Rejected, None));
            continue;
        }
        let Ok((p_local, confidence)) = estimate_center(&patch, params) else {
            out.dropped.push(drop(DropReason::NoCenter, None));
            continue;
        };
        let mut p_global = map_to_global(p_local, &b);
        let mut confidence = confidence;
        if params.recenter {
            let c = centered_box(p_global, params.min_box, rgb.width(), rgb.height());
            if let Ok((q, conf)) = estimate_center(&rgb.crop(&c), params) {
                p_global = map_to_global(q, &c);
                confidence = conf;
            }
        }
        match get_3d(p_global, depth, intr, params.depth_window) {
            Ok(p_3d) => found.push(ScrewDetection {
                p_global,
                p_3d,
                confidence,
                source: b,
            }),
            Err(_) => out.dropped.push(drop(DropReason::NoDepth, Some(p_global))),
        }
    }

    // Most confident first; ties keep the earlier box.
    let mut order: Vec<usize> = (0..found.len()).collect();
    order.sort_by(|&a, &b| {
        found[b]
            .confidence
            .total_cmp(&found[a].confidence)
            .then(a.cmp(&b))
    });
    let mut keep: Vec<ScrewDetection> = Vec::new();
    for i in order {
        let d = found[i];
        if keep
            .iter()
            .any(|k| k.p_global.distance(&d.p_global) < params.nms_radius)
        {
            out.dropped.push(DroppedCandidate {
                source: d.source,
                reason: DropReason::Duplicate,
                p_global: Some(d.p_global),
            });
        } else {
            keep.push(d);
        }
    }
    keep.sort_by(|a, b| {
        a.p_global
            .y
            .total_cmp(&b.p_global.y)
            .then(a.p_global.x.total_cmp(&b.p_global.x))
    });
    out.detections = keep;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::DEFAULT_CHANNELS;

    #[test]
    fn get_3d_principal_ray() {
        let intr = CameraIntrinsics::pinhole(7500.0, 7500.0, 10.5, 10.5);
        let d = DepthMap::from_fn(21, 21, |_, _| 1500.0);
        assert_eq!(
            get_3d(Point2::new(10.5, 10.5), &d, &intr, 3).unwrap(),
            [0.0, 0.0, 1500.0]
        );
    }

    #[test]
    fn get_3d_skips_nan() {
        let intr = CameraIntrinsics::pinhole(100.0, 100.0, 0.0, 0.0);
        let vals = [1.0, 2.0, f64::NAN, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let d = DepthMap::from_fn(3, 3, |x, y| vals[y * 3 + x]);
        let p = get_3d(Point2::new(1.5, 1.5), &d, &intr, 3).unwrap();
        assert_eq!(p[2], 5.5);
        let empty = DepthMap::from_fn(3, 3, |_, _| f64::NAN);
        assert!(matches!(
            get_3d(Point2::new(1.5, 1.5), &empty, &intr, 3),
            Err(DetectError::NoDepth { .. })
        ));
        assert!(matches!(
            get_3d(Point2::new(1.5, 1.5), &d, &intr, 2),
            Err(DetectError::InvalidParams(_))
        ));
    }

    #[test]
    fn split_round_trip() {
        let rgb = RgbImage::filled(4, 3, [0.2, 0.3, 0.4]);
        let depth = DepthMap::from_fn(4, 3, |x, _| if x == 0 { f64::NAN } else { 1000.0 });
        let img = RgbdImage::new(rgb.clone(), depth.clone()).unwrap();
        let (r, d) = split(&img);
        assert_eq!(r, rgb);
        assert!(d.get(0, 0).is_nan() && d.get(1, 0) == 1000.0);
        assert_eq!(RgbdImage::new(r, d).unwrap().rgb(), img.rgb());
        assert!(RgbdImage::new(RgbImage::filled(3, 3, [0.0; 3]), depth).is_err());
    }

    #[test]
    fn map_to_global_offsets() {
        let b = BoundingBox::new(100, 50, 30, 30);
        assert_eq!(
            map_to_global(Point2::new(10.0, 10.0), &b),
            Point2::new(110.0, 60.0)
        );
        assert_eq!(
            map_to_global(Point2::new(3.0, 4.0), &BoundingBox::new(0, 0, 5, 5)),
            Point2::new(3.0, 4.0)
        );
    }

    #[test]
    fn clip_matches_source() {
        let rgb = RgbImage::from_fn(10, 8, |x, y| [x as f64 / 10.0, y as f64 / 8.0, 0.5]);
        let boxes = [BoundingBox::new(2, 3, 4, 2), BoundingBox::new(9, 7, 1, 1)];
        let clips = clip_images(&rgb, &boxes);
        for (patch, b) in &clips {
            for y in 0..b.h {
                for x in 0..b.w {
                    assert_eq!(patch.get(x, y), rgb.get(b.x + x, b.y + y));
                }
            }
        }
        assert_eq!((clips[1].0.width(), clips[1].0.height()), (1, 1));
    }

    #[test]
    fn black_patch_is_rejected() {
        let ensemble = [FcnModel::init(&DEFAULT_CHANNELS, 1)];
        let patch = RgbImage::filled(34, 34, [0.0; 3]);
        let p = DetectParams {
            tau_fine: 0.99,
            ..DetectParams::default()
        };
        let (ok, mask) = stage2_verify(&patch, &ensemble, &p).unwrap();
        assert!(!ok && mask.count() == 0);
    }

    #[test]
    fn close_boxes_merge() {
        let merged = merge_close(
            alloc::vec![
                BoundingBox::new(0, 0, 10, 10),
                BoundingBox::new(30, 30, 5, 5),
                BoundingBox::new(8, 8, 10, 10),
                BoundingBox::new(16, 0, 10, 10),
            ],
            10.0,
        );
        // Centers 8√2 ≈ 11.3 apart: the touching neighbour at (16, 0) stays separate.
        assert_eq!(
            merged,
            alloc::vec![
                BoundingBox::new(0, 0, 10, 10),
                BoundingBox::new(30, 30, 5, 5),
                BoundingBox::new(8, 8, 10, 10),
                BoundingBox::new(16, 0, 10, 10)
            ]
        );
        let merged = merge_close(
            alloc::vec![
                BoundingBox::new(0, 0, 10, 10),
                BoundingBox::new(4, 3, 10, 10)
            ],
            10.0,
        );
        assert_eq!(merged, alloc::vec![BoundingBox::new(0, 0, 14, 13)]);
    }

    #[test]
    fn boxes_grow_inside_frame() {
        assert_eq!(
            grow_to(BoundingBox::new(0, 5, 10, 10), 36, 100, 20),
            BoundingBox::new(0, 0, 36, 20)
        );
        assert_eq!(
            grow_to(BoundingBox::new(95, 40, 5, 40), 36, 100, 100),
            BoundingBox::new(64, 40, 36, 40)
        );
    }

    #[test]
    fn empty_scene_yields_nothing() {
        let zero = FcnModel::zeros(&DEFAULT_CHANNELS);
        // A zero model gives 0.5 everywhere; thresholding above that leaves no candidates.
        let img = RgbdImage::new(
            RgbImage::filled(40, 40, [0.5; 3]),
            DepthMap::from_fn(40, 40, |_, _| 1500.0),
        )
        .unwrap();
        let p = DetectParams {
            tau_coarse: 0.6,
            ..DetectParams::default()
        };
        let intr = CameraIntrinsics::pinhole(7500.0, 7500.0, 20.0, 20.0);
        let set = detect_screws(&img, &zero, &[zero.clone()], &intr, &p).unwrap();
        assert!(set.detections.is_empty() && set.candidates == 0);
    }

    #[test]
    fn params_validate() {
        assert!(DetectParams::default().validate().is_ok());
        assert!(DetectParams {
            depth_window: 4,
            ..DetectParams::default()
        }
        .validate()
        .is_err());
        assert!(DetectParams {
            tau_fine: 1.5,
            ..DetectParams::default()
        }
        .validate()
        .is_err());
        assert!(DetectParams {
            verify_fraction: 0.0,
            ..DetectParams::default()
        }
        .validate()
        .is_err());
    }
}
