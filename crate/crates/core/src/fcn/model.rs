#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FcnError;
use crate::imgproc::{GrayImage, ProbabilityMap};

/// Channel chain of the default classifier: gray in, {background, screw} out.
pub const DEFAULT_CHANNELS: [usize; 5] = [1, 8, 16, 16, 2];
pub const KERNEL: usize = 3;
const K2: usize = KERNEL * KERNEL;
pub const WEIGHTS_VERSION: u32 = 1;
/// Output channel holding the screw class.
pub const SCREW_CHANNEL: usize = 1;

/// One 3×3 stride-1 same-padded convolution. Weights are laid out
/// `[cout][cin][ky][kx]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub cin: usize,
    pub cout: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            weights: vec![0.0; cout * cin * K2],
            bias: vec![0.0; cout],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fully convolutional two-class pixel classifier with ReLU between layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcnModel {
    pub layers: Vec<ConvLayer>,
    /// Weight-format version the model was created under.
    pub version: u32,
    /// Seed used for initialization and shuffling.
    pub seed: u64,
}

impl FcnModel {
    /// All-zero weights: every pixel gets probability 0.5.
    pub fn zeros(channels: &[usize]) -> Self {
        let layers = channels
            .windows(2)
            .map(|c| ConvLayer::zeros(c[0], c[1]))
            .collect();
        Self {
            layers,
            version: WEIGHTS_VERSION,
            seed: 0,
        }
    }

    /// Glorot-uniform weights `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(channels: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(channels);
        model.seed = seed;
        for layer in &mut model.layers {
            let fan = ((layer.cin + layer.cout) * K2) as f64;
            let limit = (6.0 / fan).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        model
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// Pixels of context on each side that influence one output pixel.
    pub fn receptive_radius(&self) -> usize {
        self.layers.len() * (KERNEL / 2)
    }

    pub fn validate(&self) -> Result<(), FcnError> {
        let first = self
            .layers
            .first()
            .ok_or(FcnError::ShapeMismatch("model has no layers"))?;
        if first.cin != 1 {
            return Err(FcnError::ShapeMismatch(
                "first layer must take one input channel",
            ));
        }
        if self.layers.last().map(|l| l.cout) != Some(2) {
            return Err(FcnError::ShapeMismatch(
                "last layer must produce two channels",
            ));
        }
        for pair in self.layers.windows(2) {
            if pair[0].cout != pair[1].cin {
                return Err(FcnError::ShapeMismatch("channel chain is broken"));
            }
        }
        for l in &self.layers {
            if l.weights.len() != l.cout * l.cin * K2 || l.bias.len() != l.cout {
                return Err(FcnError::ShapeMismatch(
                    "parameter count does not match layer shape",
                ));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(FcnError::NonFiniteWeights);
            }
        }
        Ok(())
    }

    /// Signs of every hidden pre-activation, in evaluation order. Finite-difference
    /// gradient checks use it to detect steps that cross a ReLU kink.
    pub fn activation_pattern(&self, img: &GrayImage) -> Result<Vec<bool>, FcnError> {
        let trace = Trace::run(self, img)?;
        let mut out = Vec::new();
        for (li, buf) in trace.inputs.iter().enumerate().skip(1) {
            let c = self.layers[li].cin;
            for ch in 0..c {
                for y in 0..trace.h {
                    for x in 0..trace.w {
                        out.push(buf[trace.pad_index(ch, y, x)] > 0.0);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Per-pixel screw probability (softmax over the two output channels).
pub fn forward(model: &FcnModel, img: &GrayImage) -> Result<ProbabilityMap, FcnError> {
    let trace = Trace::run(model, img)?;
    let n = trace.h * trace.w;
    let data = (0..n)
        .map(|i| {
            let (z0, z1) = (trace.logits[i], trace.logits[n + i]);
            softmax2(z0, z1)[SCREW_CHANNEL]
        })
        .collect();
    Ok(ProbabilityMap::from_raw(trace.w, trace.h, data))
}

/// Both softmax channels, `[background, screw]` per pixel.
pub fn class_probabilities(model: &FcnModel, img: &GrayImage) -> Result<Vec<[f64; 2]>, FcnError> {
    let trace = Trace::run(model, img)?;
    let n = trace.h * trace.w;
    Ok((0..n)
        .map(|i| softmax2(trace.logits[i], trace.logits[n + i]))
        .collect())
}

#[inline]
pub(crate) fn softmax2(z0: f64, z1: f64) -> [f64; 2] {
    let m = z0.max(z1);
    let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Log-sum-exp of two logits.
#[inline]
pub(crate) fn lse2(z0: f64, z1: f64) -> f64 {
    let m = z0.max(z1);
    m + ((z0 - m).exp() + (z1 - m).exp()).ln()
}

/// Forward activations kept for backpropagation.
pub(crate) struct Trace {
    pub h: usize,
    pub w: usize,
    /// Zero-padded input of every layer, `[cin][h + 2][w + 2]`. Hidden inputs
    /// are post-ReLU, so `> 0` doubles as the ReLU mask.
    pub inputs: Vec<Vec<f64>>,
    /// Final pre-softmax output `[2][h][w]`.
    pub logits: Vec<f64>,
}

impl Trace {
    #[inline]
    pub fn pad_index(&self, ch: usize, y: usize, x: usize) -> usize {
        (ch * (self.h + 2) + y + 1) * (self.w + 2) + x + 1
    }

    pub fn run(model: &FcnModel, img: &GrayImage) -> Result<Trace, FcnError> {
        model.validate()?;
        let (w, h) = (img.width(), img.height());
        let rf = 2 * model.receptive_radius() + 1;
        if w < rf || h < rf {
            return Err(FcnError::ImageTooSmall {
                width: w,
                height: h,
                min: rf,
            });
        }
        let (pw, ph) = (w + 2, h + 2);
        let mut input = vec![0.0; ph * pw];
        for y in 0..h {
            input[(y + 1) * pw + 1..(y + 1) * pw + 1 + w]
                .copy_from_slice(&img.data()[y * w..(y + 1) * w]);
        }
        let mut inputs = Vec::with_capacity(model.layers.len());
        inputs.push(input);
        let mut out = Vec::new();
        for (li, layer) in model.layers.iter().enumerate() {
            out = vec![0.0; layer.cout * h * w];
            conv_forward(layer, inputs.last().expect("input pushed"), h, w, &mut out);
            if li + 1 < model.layers.len() {
                let mut next = vec![0.0; layer.cout * ph * pw];
                for c in 0..layer.cout {
                    for y in 0..h {
                        let src = &out[(c * h + y) * w..(c * h + y + 1) * w];
                        let dst =
                            &mut next[(c * ph + y + 1) * pw + 1..(c * ph + y + 1) * pw + 1 + w];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = s.max(0.0);
                        }
                    }
                }
                inputs.push(next);
            }
        }
        Ok(Trace {
            h,
            w,
            inputs,
            logits: out,
        })
    }
}

/// `out[co] = b[co] + Σ_ci w[co][ci] ⋆ in[ci]` over a padded input.
pub(crate) fn conv_forward(layer: &ConvLayer, input: &[f64], h: usize, w: usize, out: &mut [f64]) {
    // Work in the padded row stride so every tap is one contiguous run; the
    // two pad columns of each row pick up junk that is dropped on copy-out.
    let (pw, ph) = (w + 2, h + 2);
    let n = (h - 1) * pw + w;
    let mut acc = vec![0.0; n];
    for co in 0..layer.cout {
        acc.fill(layer.bias[co]);
        for ci in 0..layer.cin {
            let ip = &input[ci * ph * pw..(ci + 1) * ph * pw];
            let k = &layer.weights[(co * layer.cin + ci) * K2..(co * layer.cin + ci + 1) * K2];
            taps9(&mut acc, ip, pw, 0, k);
        }
        let o = &mut out[co * h * w..(co + 1) * h * w];
        for y in 0..h {
            o[y * w..(y + 1) * w].copy_from_slice(&acc[y * pw..y * pw + w]);
        }
    }
}

/// `acc[i] += Σ k[t] · src[i + base + offset(t)]` over the nine taps, where
/// tap `(ky, kx)` sits at `ky · pw + kx`; `base` shifts every read.
#[inline]
fn taps9(acc: &mut [f64], src: &[f64], pw: usize, base: usize, k: &[f64]) {
    let n = acc.len();
    let r: [&[f64]; K2] = core::array::from_fn(|t| {
        let off = base + (t / KERNEL) * pw + t % KERNEL;
        &src[off..off + n]
    });
    let k: [f64; K2] = core::array::from_fn(|t| k[t]);
    for i in 0..n {
        let a = k[0] * r[0][i] + k[1] * r[1][i] + k[2] * r[2][i];
        let b = k[3] * r[3][i] + k[4] * r[4][i] + k[5] * r[5][i];
        let c = k[6] * r[6][i] + k[7] * r[7][i] + k[8] * r[8][i];
        acc[i] += a + b + c;
    }
}

/// `Σ_i g[i] · src[i + offset(t)]` for the nine taps, in two interleaved lanes.
fn dot9(g: &[f64], src: &[f64], pw: usize) -> [f64; K2] {
    let n = g.len();
    let r: [&[f64]; K2] = core::array::from_fn(|t| {
        let off = (t / KERNEL) * pw + t % KERNEL;
        &src[off..off + n]
    });
    let mut s = [[0.0f64; 2]; K2];
    let pairs = n / 2;
    for p in 0..pairs {
        let i = 2 * p;
        let (g0, g1) = (g[i], g[i + 1]);
        for t in 0..K2 {
            s[t][0] += g0 * r[t][i];
            s[t][1] += g1 * r[t][i + 1];
        }
    }
    core::array::from_fn(|t| {
        let tail = if n % 2 == 1 {
            g[n - 1] * r[t][n - 1]
        } else {
            0.0
        };
        s[t][0] + s[t][1] + tail
    })
}

/// Accumulates parameter gradients of one layer and, when `grad_in` is given,
/// the gradient with respect to its padded input.
pub(crate) fn conv_backward(
    layer: &ConvLayer,
    input: &[f64],
    grad_out: &[f64],
    h: usize,
    w: usize,
    grad: &mut ConvLayer,
    mut grad_in: Option<&mut [f64]>,
) {
    let (pw, ph) = (w + 2, h + 2);
    let n = (h - 1) * pw + w;
    // Output gradient in padded stride, zero in the pad columns.
    let mut g = vec![0.0; n];
    let mut gpad = vec![0.0; ph * pw];
    for co in 0..layer.cout {
        let go = &grad_out[co * h * w..(co + 1) * h * w];
        grad.bias[co] += go.iter().sum::<f64>();
        for y in 0..h {
            g[y * pw..y * pw + w].copy_from_slice(&go[y * w..(y + 1) * w]);
            gpad[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&go[y * w..(y + 1) * w]);
        }
        for ci in 0..layer.cin {
            let base = (co * layer.cin + ci) * K2;
            let ip = &input[ci * ph * pw..(ci + 1) * ph * pw];
            let dk = dot9(&g, ip, pw);
            for (d, v) in grad.weights[base..base + K2].iter_mut().zip(dk) {
                *d += v;
            }
            if let Some(gi) = grad_in.as_deref_mut() {
                // Transposed conv as a correlation with the flipped kernel over
                // the zero-padded output gradient; only interior entries are written.
                let k = &layer.weights[base..base + K2];
                let flipped: [f64; K2] = core::array::from_fn(|t| k[K2 - 1 - t]);
                let dst = &mut gi[ci * ph * pw + pw + 1..ci * ph * pw + pw + 1 + n];
                taps9(dst, &gpad, pw, 0, &flipped);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    #[test]
    fn zero_model_gives_one_half() {
        let m = FcnModel::zeros(&DEFAULT_CHANNELS);
        let p = forward(&m, &noise_image(20, 15, 1)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_matches_input_shape() {
        let m = FcnModel::init(&DEFAULT_CHANNELS, 3);
        let p = forward(&m, &noise_image(97, 41, 2)).unwrap();
        assert_eq!((p.width(), p.height()), (97, 41));
    }

    #[test]
    fn softmax_channels_sum_to_one() {
        let mut m = FcnModel::init(&DEFAULT_CHANNELS, 4);
        m.layers[3].weights.iter_mut().for_each(|w| *w *= 40.0);
        let probs = class_probabilities(&m, &noise_image(24, 24, 5)).unwrap();
        for p in probs {
            assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut m = FcnModel::init(&DEFAULT_CHANNELS, 1);
        m.layers[2] = ConvLayer::zeros(8, 16);
        assert!(matches!(
            forward(&m, &noise_image(16, 16, 0)),
            Err(FcnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn too_small_image_is_rejected() {
        let m = FcnModel::init(&DEFAULT_CHANNELS, 1);
        assert!(matches!(
            forward(&m, &noise_image(8, 30, 0)),
            Err(FcnError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = FcnModel::init(&DEFAULT_CHANNELS, 11);
        assert_eq!(a, FcnModel::init(&DEFAULT_CHANNELS, 11));
        assert_ne!(a, FcnModel::init(&DEFAULT_CHANNELS, 12));
        for l in &a.layers {
            let limit = (6.0 / ((l.cin + l.cout) * 9) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= limit));
        }
        assert_eq!(a.param_count(), 72 + 8 + 1152 + 16 + 2304 + 16 + 288 + 2);
    }

    #[test]
    fn translation_covariance_in_the_interior() {
        let m = FcnModel::init(&DEFAULT_CHANNELS, 9);
        let base = noise_image(40, 40, 7);
        let shifted = GrayImage::from_fn(40, 40, |x, y| {
            if x >= 3 && y >= 2 {
                base.get(x - 3, y - 2)
            } else {
                0.3
            }
        });
        let p = forward(&m, &base).unwrap();
        let q = forward(&m, &shifted).unwrap();
        let band = m.receptive_radius();
        for y in band..40 - band - 2 {
            for x in band..40 - band - 3 {
                assert_eq!(p.get(x, y), q.get(x + 3, y + 2));
            }
        }
    }
}
