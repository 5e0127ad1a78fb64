//! Pinhole camera with two-term radial distortion.
//!
//! Pixel coordinates are continuous: pixel `(i, j)` spans `[i, i + 1)` and the
//! principal point `(cx, cy)` is expressed in the same frame. Camera frame is
//! x right, y down, z along the optical axis, millimetres.

#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::imgproc::Point2;

/// Undistortion stops once the pixel-space update is below this.
pub const UNDISTORT_TOL_PX: f64 = 1e-9;
pub const UNDISTORT_MAX_ITERS: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("depth {0} mm is not positive")]
    NonPositiveDepth(f64),
    #[error("undistortion did not converge at ({x:.2}, {y:.2}) px")]
    NoConvergence { x: f64, y: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
        }
    }

    /// Same camera seen through a sensor window whose top-left corner sits at
    /// `(ox, oy)` on the full sensor.
    pub fn cropped(&self, ox: f64, oy: f64) -> Self {
        Self {
            cx: self.cx - ox,
            cy: self.cy - oy,
            ..*self
        }
    }

    /// Lateral size of one pixel at the given range, in mm.
    pub fn mm_per_pixel(&self, depth_mm: f64) -> f64 {
        depth_mm / self.fx.min(self.fy)
    }

    #[inline]
    fn radial(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Normalized undistorted → normalized distorted coordinates.
    pub fn distort(&self, xn: f64, yn: f64) -> (f64, f64) {
        let f = self.radial(xn * xn + yn * yn);
        (xn * f, yn * f)
    }

    /// Fixed-point inversion of [`distort`](Self::distort).
    pub fn undistort(&self, xd: f64, yd: f64) -> Result<(f64, f64), CameraError> {
        let (mut x, mut y) = (xd, yd);
        let scale = self.fx.max(self.fy);
        for _ in 0..UNDISTORT_MAX_ITERS {
            let f = self.radial(x * x + y * y);
            if !(f > 0.0) {
                break;
            }
            let (nx, ny) = (xd / f, yd / f);
            let step = (nx - x).abs().max((ny - y).abs()) * scale;
            x = nx;
            y = ny;
            if step < UNDISTORT_TOL_PX {
                return Ok((x, y));
            }
        }
        Err(CameraError::NoConvergence {
            x: xd * self.fx + self.cx,
            y: yd * self.fy + self.cy,
        })
    }

    /// Camera point → distorted pixel and range.
    pub fn project(&self, p: [f64; 3]) -> Result<(Point2, f64), CameraError> {
        if !(p[2] > 0.0) {
            return Err(CameraError::NonPositiveDepth(p[2]));
        }
        let (xd, yd) = self.distort(p[0] / p[2], p[1] / p[2]);
        Ok((
            Point2::new(self.fx * xd + self.cx, self.fy * yd + self.cy),
            p[2],
        ))
    }

    /// Distorted pixel and range → camera point.
    pub fn back_project(&self, px: Point2, depth: f64) -> Result<[f64; 3], CameraError> {
        if !(depth > 0.0) {
            return Err(CameraError::NonPositiveDepth(depth));
        }
        let (xn, yn) = self.undistort((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)?;
        Ok([xn * depth, yn * depth, depth])
    }

    /// Pinhole back-projection that ignores distortion.
    pub fn back_project_pinhole(&self, px: Point2, depth: f64) -> [f64; 3] {
        [
            (px.x - self.cx) * depth / self.fx,
            (px.y - self.cy) * depth / self.fy,
            depth,
        ]
    }

    /// Inverse of [`back_project_pinhole`](Self::back_project_pinhole).
    pub fn project_pinhole(&self, p: [f64; 3]) -> Point2 {
        Point2::new(
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }
}
