use alloc::vec;
use alloc::vec::Vec;

use super::{BinaryMask, BoundingBox};

/// One 8-connected foreground component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    /// Tight bounding box.
    pub bbox: BoundingBox,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// Labels 8-connected components. Components are ordered by their first
/// pixel in row-major scan order.
pub fn label_components(mask: &BinaryMask) -> Vec<Component> {
    let (w, h) = (mask.width(), mask.height());
    let data = mask.data();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        pixels.sort_unstable();
        out.push(Component {
            bbox: BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
            pixels,
        });
    }
    out
}

/// Bounding boxes of 8-connected components with at least `min_area` pixels,
/// each grown by `padding` on every side and clamped to the image.
///
/// Boxes are sorted row-major by the top-left corner of the tight box.
pub fn connected_regions(mask: &BinaryMask, min_area: usize, padding: usize) -> Vec<BoundingBox> {
    let (w, h) = (mask.width(), mask.height());
    let mut comps: Vec<Component> = label_components(mask)
        .into_iter()
        .filter(|c| c.area() >= min_area.max(1))
        .collect();
    comps.sort_by_key(|c| (c.bbox.y, c.bbox.x, c.pixels[0]));
    comps
        .iter()
        .map(|c| {
            let b = c.bbox;
            let x0 = b.x.saturating_sub(padding);
            let y0 = b.y.saturating_sub(padding);
            let x1 = (b.x + b.w + padding).min(w);
            let y1 = (b.y + b.h + padding).min(h);
            BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
        })
        .collect()
}
