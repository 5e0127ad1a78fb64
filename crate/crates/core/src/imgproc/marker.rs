#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use super::{label_components, BinaryMask, ImageError, Point2, RgbImage};

/// Per-channel inclusive color window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorWindow {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl ColorWindow {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|c| p[c] >= self.lo[c] && p[c] <= self.hi[c])
    }

    fn is_valid(&self) -> bool {
        (0..3).all(|c| self.lo[c] <= self.hi[c])
    }
}

/// Locates a single colored marker and returns its weighted centroid.
///
/// Pixels inside `window` are grouped into 8-connected components; exactly one
/// component must have an area in `[min_area, max_area]`. Each of its pixels is
/// weighted by its chroma (`max − min` over channels), which vanishes on a
/// neutral background.
pub fn find_marker_centroid(
    img: &RgbImage,
    window: &ColorWindow,
    min_area: usize,
    max_area: usize,
) -> Result<Point2, ImageError> {
    if !window.is_valid() || min_area > max_area {
        return Err(ImageError::InvalidParameter("marker window or area range"));
    }
    let mask = BinaryMask::from_fn(img.width(), img.height(), |x, y| {
        window.contains(img.get(x, y))
    });
    let mut candidates = label_components(&mask)
        .into_iter()
        .filter(|c| (min_area..=max_area).contains(&c.area()));
    let Some(marker) = candidates.next() else {
        return Err(ImageError::NoMarker);
    };
    let extra = candidates.count();
    if extra > 0 {
        return Err(ImageError::AmbiguousMarker { count: extra + 1 });
    }

    let w = img.width();
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &i in &marker.pixels {
        let p = img.data()[i];
        let chroma = p[0].max(p[1]).max(p[2]) - p[0].min(p[1]).min(p[2]);
        sw += chroma;
        sx += chroma * ((i % w) as f64 + 0.5);
        sy += chroma * ((i / w) as f64 + 0.5);
    }
    if sw <= 0.0 {
        return Err(ImageError::NoMarker);
    }
    Ok(Point2::new(sx / sw, sy / sw))
}

#[cfg(test)]
mod tests {
    use super::*;

    const RED: ColorWindow = ColorWindow {
        lo: [0.5, 0.0, 0.0],
        hi: [1.0, 0.5, 0.5],
    };

    fn scene(markers: &[(f64, f64)]) -> RgbImage {
        RgbImage::from_fn(80, 60, |x, y| {
            let mut a: f64 = 0.0;
            for &(cx, cy) in markers {
                let mut cover = 0.0;
                for s in 0..16 {
                    let px = x as f64 + ((s % 4) as f64 + 0.5) / 4.0;
                    let py = y as f64 + ((s / 4) as f64 + 0.5) / 4.0;
                    if (px - cx).hypot(py - cy) <= 6.0 {
                        cover += 1.0 / 16.0;
                    }
                }
                a = a.max(cover);
            }
            [0.8 + 0.1 * a, 0.8 - 0.7 * a, 0.8 - 0.7 * a]
        })
    }

    #[test]
    fn single_marker() {
        let img = scene(&[(30.3, 22.7)]);
        let p = find_marker_centroid(&img, &RED, 20, 400).unwrap();
        assert!(p.distance(&Point2::new(30.3, 22.7)) < 0.3, "{p:?}");
    }

    #[test]
    fn no_marker() {
        let img = scene(&[]);
        assert_eq!(
            find_marker_centroid(&img, &RED, 20, 400),
            Err(ImageError::NoMarker)
        );
    }

    #[test]
    fn two_markers_are_ambiguous() {
        let img = scene(&[(20.0, 20.0), (55.0, 35.0)]);
        assert_eq!(
            find_marker_centroid(&img, &RED, 20, 400),
            Err(ImageError::AmbiguousMarker { count: 2 })
        );
    }
}
