#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use super::{BinaryMask, GammaParam, GrayImage, ProbabilityMap, RgbImage};

const HIST_BINS: usize = 256;

/// Images that support a per-channel power-law remap.
pub trait GammaCorrect: Sized {
    fn gamma_correct(&self, g: GammaParam) -> Self;
    /// Mean over all pixels and channels.
    fn mean_intensity(&self) -> f64;
}

impl GammaCorrect for GrayImage {
    fn gamma_correct(&self, g: GammaParam) -> Self {
        if g.value() == 1.0 {
            return self.clone();
        }
        let e = g.value();
        let data = self.data().iter().map(|&v| v.powf(e)).collect();
        GrayImage::from_raw(self.width(), self.height(), data)
    }

    fn mean_intensity(&self) -> f64 {
        self.mean()
    }
}

impl GammaCorrect for RgbImage {
    fn gamma_correct(&self, g: GammaParam) -> Self {
        if g.value() == 1.0 {
            return self.clone();
        }
        let e = g.value();
        let data = self.data().iter().map(|p| p.map(|v| v.powf(e))).collect();
        RgbImage::from_raw(self.width(), self.height(), data)
    }

    fn mean_intensity(&self) -> f64 {
        self.mean()
    }
}

/// Replaces every channel value `v` with `v^gamma`.
pub fn gamma_correct<I: GammaCorrect>(img: &I, g: GammaParam) -> I {
    img.gamma_correct(g)
}

/// Exponent that moves the mean intensity to 0.5: `ln 0.5 / ln mean`, clamped.
pub fn auto_gamma<I: GammaCorrect>(img: &I) -> GammaParam {
    let mean = img.mean_intensity();
    if mean <= 0.0 {
        // Black image: brighten as much as allowed.
        return GammaParam::new(GammaParam::MIN);
    }
    if mean >= 1.0 {
        return GammaParam::new(GammaParam::MAX);
    }
    GammaParam::new(0.5f64.ln() / mean.ln())
}

/// ITU-R BT.601 luma.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .data()
        .iter()
        .map(|&[r, g, b]| (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
        .collect();
    GrayImage::from_raw(img.width(), img.height(), data)
}

#[inline]
fn bin_of(v: f64) -> usize {
    ((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

/// Histogram equalization: each pixel maps to the fraction of pixels whose
/// 256-level bin is at or below its own.
pub fn equalize_hist(img: &GrayImage) -> GrayImage {
    let mut hist = [0usize; HIST_BINS];
    for &v in img.data() {
        hist[bin_of(v)] += 1;
    }
    let n = img.data().len() as f64;
    let mut lut = [0.0f64; HIST_BINS];
    let mut acc = 0usize;
    for (b, &count) in hist.iter().enumerate() {
        acc += count;
        lut[b] = acc as f64 / n;
    }
    let data: Vec<f64> = img.data().iter().map(|&v| lut[bin_of(v)]).collect();
    GrayImage::from_raw(img.width(), img.height(), data)
}

/// `true` where the probability is at least `tau`.
pub fn threshold(map: &ProbabilityMap, tau: f64) -> BinaryMask {
    let data = map.data().iter().map(|&p| p >= tau).collect();
    BinaryMask::new(map.width(), map.height(), data).expect("dimensions come from a valid map")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn gamma_one_is_identity() {
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 5 + y) as f64 / 40.0);
        assert_eq!(gamma_correct(&img, GammaParam::new(1.0)), img);
        let rgb = RgbImage::from_fn(4, 3, |x, y| [x as f64 / 4.0, y as f64 / 3.0, 0.7]);
        assert_eq!(gamma_correct(&rgb, GammaParam::new(1.0)), rgb);
    }

    #[test]
    fn gamma_single_pixel() {
        let img = GrayImage::filled(1, 1, 0.25);
        let out = gamma_correct(&img, GammaParam::new(0.5));
        assert!((out.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auto_gamma_on_bright_uniform_image_hits_the_clamp() {
        let img = GrayImage::filled(8, 8, 0.81);
        let g = auto_gamma(&img);
        // ln 0.5 / ln 0.81 = 3.289 exceeds the clamp, so the mean lands at 0.81^3.
        assert_eq!(g.value(), 3.0);
        let out = gamma_correct(&img, g);
        assert!((out.mean() - 0.531441).abs() < 1e-6);
    }

    #[test]
    fn auto_gamma_examples() {
        assert!((auto_gamma(&GrayImage::filled(3, 3, 0.5)).value() - 1.0).abs() < 1e-12);
        assert!((auto_gamma(&GrayImage::filled(3, 3, 0.25)).value() - 0.5).abs() < 1e-12);
        assert_eq!(auto_gamma(&GrayImage::filled(3, 3, 0.95)).value(), 3.0);
        assert_eq!(auto_gamma(&GrayImage::filled(3, 3, 0.0)).value(), 0.3);
        assert_eq!(auto_gamma(&GrayImage::filled(3, 3, 1.0)).value(), 3.0);
    }

    #[test]
    fn auto_gamma_neutralizes_mid_range_means() {
        let img = GrayImage::filled(4, 4, 0.3);
        let out = gamma_correct(&img, auto_gamma(&img));
        assert!((out.mean() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grayscale_weights() {
        let img = RgbImage::new(2, 1, vec![[1.0, 1.0, 1.0], [1.0, 0.0, 0.0]]).unwrap();
        let g = to_grayscale(&img);
        assert!((g.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((g.get(1, 0) - 0.299).abs() < 1e-15);
    }

    #[test]
    fn equalize_two_levels() {
        let img = GrayImage::from_fn(10, 10, |x, _| if x < 5 { 0.2 } else { 0.8 });
        let eq = equalize_hist(&img);
        assert_eq!(eq.get(0, 0), 0.5);
        assert_eq!(eq.get(9, 9), 1.0);
    }

    #[test]
    fn equalize_constant_stays_constant() {
        let img = GrayImage::filled(6, 6, 0.37);
        let eq = equalize_hist(&img);
        assert!(eq.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn equalize_ramp_is_monotone() {
        let img = GrayImage::from_fn(64, 4, |x, _| x as f64 / 63.0);
        let eq = equalize_hist(&img);
        for x in 1..64 {
            assert!(eq.get(x, 0) >= eq.get(x - 1, 0));
        }
        assert_eq!(eq.get(63, 0), 1.0);
    }

    #[test]
    fn threshold_examples() {
        let hi = ProbabilityMap::new(3, 3, vec![0.9; 9]).unwrap();
        assert_eq!(threshold(&hi, 0.5).count(), 9);
        let lo = ProbabilityMap::new(3, 3, vec![0.2; 9]).unwrap();
        assert_eq!(threshold(&lo, 0.5).count(), 0);
        let edge = ProbabilityMap::new(1, 1, vec![0.5]).unwrap();
        assert!(threshold(&edge, 0.5).get(0, 0));
    }
}
