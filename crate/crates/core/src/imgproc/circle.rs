#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CircleFit, GrayImage, ImageError, Point2};

/// Search and acceptance settings for [`detect_outer_circle`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleParams {
    /// Smallest radius searched, pixels.
    pub r_min: usize,
    /// Largest radius searched, pixels. Must be below half the smaller image side.
    pub r_max: usize,
    /// Absolute gradient magnitude (intensity per pixel) an edge pixel needs.
    pub edge_abs: f64,
    /// Gradient magnitude relative to the image maximum an edge pixel needs.
    pub edge_rel: f64,
    /// Peak score below which the fit is rejected.
    pub score_floor: f64,
    /// The largest radius whose peak reaches this fraction of the best peak
    /// wins, so the head rim beats circles formed inside it.
    pub outer_ratio: f64,
}

impl Default for CircleParams {
    fn default() -> Self {
        Self {
            r_min: 6,
            r_max: 16,
            edge_abs: 0.04,
            edge_rel: 0.25,
            score_floor: 0.25,
            outer_ratio: 0.7,
        }
    }
}

/// Sobel gradient, normalized so a unit step gives a peak of 0.5 per pixel.
pub(crate) fn sobel(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let d = img.data();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| {
                d[(y as isize + dy) as usize * w + (x as isize + dx) as usize]
            };
            let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gx[y * w + x] = sx / 8.0;
            gy[y * w + x] = sy / 8.0;
        }
    }
    (gx, gy)
}

/// Gradient-vote circle detection over integer `(cx, cy, r)` cells.
///
/// Every edge pixel votes along its gradient direction, both ways, at each
/// searched radius; votes are splatted bilinearly. The best cell is refined to
/// sub-pixel precision by the centroid of its 3×3 neighbourhood (summed over
/// the adjacent radius planes). The score is the neighbourhood vote mass over
/// the circle perimeter, capped at 1.
pub fn detect_outer_circle(
    img: &GrayImage,
    params: &CircleParams,
) -> Result<CircleFit, ImageError> {
    let (w, h) = (img.width(), img.height());
    if params.r_min < 2 || params.r_max < params.r_min || 2 * params.r_max >= w.min(h) {
        return Err(ImageError::InvalidParameter(
            "circle radius range does not fit the image",
        ));
    }
    let (gx, gy) = sobel(img);
    let max_mag = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    let floor = params.edge_abs.max(params.edge_rel * max_mag);

    let nr = params.r_max - params.r_min + 1;
    let plane = w * h;
    let mut acc = vec![0.0f64; nr * plane];
    let mut any_edge = false;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w - 1 {
            let i = y * w + x;
            let mag = gx[i].hypot(gy[i]);
            if mag < floor || mag == 0.0 {
                continue;
            }
            any_edge = true;
            let (dx, dy) = (gx[i] / mag, gy[i] / mag);
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            for ri in 0..nr {
                let r = (params.r_min + ri) as f64;
                let a = &mut acc[ri * plane..(ri + 1) * plane];
                splat(a, w, h, px + r * dx, py + r * dy);
                splat(a, w, h, px - r * dx, py - r * dy);
            }
        }
    }
    if !any_edge {
        return Err(ImageError::NoCircle { score: 0.0 });
    }

    // Peak of the 3×3 box sum, per plane, normalized by perimeter.
    let mut peaks = vec![(-1.0f64, 0usize, 0usize); nr];
    for (ri, peak) in peaks.iter_mut().enumerate() {
        let r = (params.r_min + ri) as f64;
        let a = &acc[ri * plane..(ri + 1) * plane];
        for cy in 1..h - 1 {
            for cx in 1..w - 1 {
                if a[cy * w + cx] == 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for yy in cy - 1..=cy + 1 {
                    for xx in cx - 1..=cx + 1 {
                        s += a[yy * w + xx];
                    }
                }
                let score = s / (2.0 * core::f64::consts::PI * r);
                if score > peak.0 {
                    *peak = (score, cx, cy);
                }
            }
        }
    }
    let top = peaks.iter().map(|p| p.0).fold(-1.0, f64::max);
    let ri = (0..nr)
        .rev()
        .find(|&ri| peaks[ri].0 >= params.outer_ratio * top)
        .unwrap_or(0);
    let (best_score, cx, cy) = peaks[ri];
    let best = (ri, cx, cy);
    let score = best_score.clamp(0.0, 1.0);
    if best_score < params.score_floor {
        return Err(ImageError::NoCircle { score });
    }

    let (ri, cx, cy) = best;
    let (mut sw, mut sx, mut sy, mut sr) = (0.0, 0.0, 0.0, 0.0);
    for rj in ri.saturating_sub(1)..=(ri + 1).min(nr - 1) {
        let a = &acc[rj * plane..(rj + 1) * plane];
        let r = (params.r_min + rj) as f64;
        for yy in cy - 1..=cy + 1 {
            for xx in cx - 1..=cx + 1 {
                let v = a[yy * w + xx];
                sw += v;
                sx += v * (xx as f64 + 0.5);
                sy += v * (yy as f64 + 0.5);
                sr += v * r;
            }
        }
    }
    Ok(CircleFit {
        center: Point2::new(sx / sw, sy / sw),
        radius: sr / sw,
        score,
    })
}

#[inline]
fn splat(acc: &mut [f64], w: usize, h: usize, px: f64, py: f64) {
    let fx = px - 0.5;
    let fy = py - 0.5;
    if fx < 0.0 || fy < 0.0 {
        return;
    }
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    if x0 + 1 >= w || y0 + 1 >= h {
        return;
    }
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    acc[y0 * w + x0] += (1.0 - tx) * (1.0 - ty);
    acc[y0 * w + x0 + 1] += tx * (1.0 - ty);
    acc[(y0 + 1) * w + x0] += (1.0 - tx) * ty;
    acc[(y0 + 1) * w + x0 + 1] += tx * ty;
}
