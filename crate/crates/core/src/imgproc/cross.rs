#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CircleFit, CrossFit, GrayImage, ImageError, Point2};
use crate::util::median_in_place;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossParams {
    /// Fraction of the head radius searched for recess pixels (keeps the rim shading out).
    pub inner_fraction: f64,
    /// How much darker than the disk median a recess pixel must be.
    pub dark_margin: f64,
    /// Minimum number of recess pixels.
    pub min_dark_pixels: usize,
}

impl Default for CrossParams {
    fn default() -> Self {
        Self {
            inner_fraction: 0.75,
            dark_margin: 0.2,
            min_dark_pixels: 8,
        }
    }
}

/// Centroid of the dark recess inside a fitted head disk.
///
/// Pixels darker than the disk median by `dark_margin` are weighted by how much
/// darker they are. The score compares the dark mass of the four quadrants
/// around the centroid: `4 · min / total`, which is 1 for a four-fold symmetric
/// recess.
pub fn detect_cross_center(
    img: &GrayImage,
    head: &CircleFit,
    params: &CrossParams,
) -> Result<CrossFit, ImageError> {
    let (w, h) = (img.width(), img.height());
    let c = head.center;
    let r = head.radius * params.inner_fraction;
    if !(c.x >= 0.0 && c.y >= 0.0 && c.x <= w as f64 && c.y <= h as f64) || r <= 0.0 {
        return Err(ImageError::InvalidParameter("head center outside image"));
    }
    let x0 = (c.x - r).floor().max(0.0) as usize;
    let y0 = (c.y - r).floor().max(0.0) as usize;
    let x1 = ((c.x + r).ceil() as usize).min(w - 1);
    let y1 = ((c.y + r).ceil() as usize).min(h - 1);

    let mut inside: Vec<(f64, f64, f64)> = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if (px - c.x) * (px - c.x) + (py - c.y) * (py - c.y) <= r * r {
                inside.push((px, py, img.get(x, y)));
            }
        }
    }
    let mut values: Vec<f64> = inside.iter().map(|p| p.2).collect();
    let Some(median) = median_in_place(&mut values) else {
        return Err(ImageError::NoCross { dark_pixels: 0 });
    };

    let cut = median - params.dark_margin;
    let dark: Vec<(f64, f64, f64)> = inside
        .iter()
        .filter(|p| p.2 < cut)
        .map(|&(x, y, v)| (x, y, median - v))
        .collect();
    if dark.len() < params.min_dark_pixels {
        return Err(ImageError::NoCross {
            dark_pixels: dark.len(),
        });
    }
    let mass: f64 = dark.iter().map(|p| p.2).sum();
    let cx = dark.iter().map(|p| p.0 * p.2).sum::<f64>() / mass;
    let cy = dark.iter().map(|p| p.1 * p.2).sum::<f64>() / mass;

    let mut quad = [0.0f64; 4];
    for &(x, y, m) in &dark {
        let q = usize::from(x >= cx) + 2 * usize::from(y >= cy);
        quad[q] += m;
    }
    let min_q = quad.iter().copied().fold(f64::INFINITY, f64::min);
    let score = (4.0 * min_q / mass).clamp(0.0, 1.0);
    Ok(CrossFit {
        center: Point2::new(cx, cy),
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recess(size: usize, head: Point2, recess: Point2, arm: f64, half_width: f64) -> GrayImage {
        GrayImage::from_fn(size, size, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if (px - head.x).hypot(py - head.y) > 12.0 {
                return 0.4;
            }
            let (dx, dy) = (px - recess.x, py - recess.y);
            let on_arm = (dx.abs() <= half_width && dy.abs() <= arm)
                || (dy.abs() <= half_width && dx.abs() <= arm);
            if on_arm {
                0.1
            } else {
                0.85
            }
        })
    }

    fn fit(c: Point2) -> CircleFit {
        CircleFit {
            center: c,
            radius: 12.0,
            score: 1.0,
        }
    }

    #[test]
    fn centered_cross() {
        let c = Point2::new(17.0, 17.0);
        let img = recess(34, c, c, 7.0, 1.5);
        let f = detect_cross_center(&img, &fit(c), &CrossParams::default()).unwrap();
        assert!(f.center.distance(&c) < 1.0);
        assert!(f.score > 0.8, "{f:?}");
    }

    #[test]
    fn offset_recess_is_tracked() {
        let head = Point2::new(17.0, 17.0);
        let rc = Point2::new(20.0, 17.0);
        let img = recess(34, head, rc, 5.0, 1.5);
        let f = detect_cross_center(&img, &fit(head), &CrossParams::default()).unwrap();
        assert!(f.center.distance(&rc) < f.center.distance(&head), "{f:?}");
        assert!(f.center.distance(&rc) < 1.0, "{f:?}");
    }

    #[test]
    fn uniform_dark_disk_has_no_cross() {
        let c = Point2::new(17.0, 17.0);
        let img = GrayImage::from_fn(34, 34, |x, y| {
            if (x as f64 + 0.5 - 17.0).hypot(y as f64 + 0.5 - 17.0) < 12.0 {
                0.1
            } else {
                0.8
            }
        });
        assert!(matches!(
            detect_cross_center(&img, &fit(c), &CrossParams::default()),
            Err(ImageError::NoCross { .. })
        ));
    }
}
