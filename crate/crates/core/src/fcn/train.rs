#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{conv_backward, lse2, softmax2, ConvLayer, FcnModel, Trace, DEFAULT_CHANNELS};
use super::FcnError;
use crate::imgproc::{BinaryMask, GrayImage};

/// Side length of a training patch.
pub const PATCH_SIZE: usize = 34;

/// A 34×34 grayscale patch with a per-pixel screw label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPatch {
    image: GrayImage,
    label: BinaryMask,
}

impl LabeledPatch {
    pub fn new(image: GrayImage, label: BinaryMask) -> Result<Self, FcnError> {
        for (w, h) in [
            (image.width(), image.height()),
            (label.width(), label.height()),
        ] {
            if w != PATCH_SIZE || h != PATCH_SIZE {
                return Err(FcnError::PatchShape {
                    width: w,
                    height: h,
                });
            }
        }
        Ok(Self { image, label })
    }

    pub fn image(&self) -> &GrayImage {
        &self.image
    }

    pub fn label(&self) -> &BinaryMask {
        &self.label
    }

    pub fn positive_pixels(&self) -> usize {
        self.label.count()
    }

    /// One of the eight symmetries of the square (rotations by 90° and mirrors).
    pub fn dihedral(&self, op: u8) -> LabeledPatch {
        let n = PATCH_SIZE;
        let map = |x: usize, y: usize| -> (usize, usize) {
            let (x, y) = if op & 4 != 0 { (n - 1 - x, y) } else { (x, y) };
            match op & 3 {
                0 => (x, y),
                1 => (n - 1 - y, x),
                2 => (n - 1 - x, n - 1 - y),
                _ => (y, n - 1 - x),
            }
        };
        let image = GrayImage::from_fn(n, n, |x, y| {
            let (sx, sy) = map(x, y);
            self.image.get(sx, sy)
        });
        let label = BinaryMask::from_fn(n, n, |x, y| {
            let (sx, sy) = map(x, y);
            self.label.get(sx, sy)
        });
        LabeledPatch { image, label }
    }
}

/// Optimizer and schedule settings. Adam with a step-decayed learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub seed: u64,
    /// Loss weight of screw pixels relative to background pixels.
    pub positive_weight: f64,
    /// Random dihedral transform of every sample each epoch.
    pub augment: bool,
    /// Per-pixel loss above which training is declared diverged.
    pub divergence_ceiling: f64,
    pub channels: Vec<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 30,
            lr0: 0.01,
            decay_factor: 0.25,
            decay_every: 10,
            seed: 0,
            positive_weight: 1.0,
            augment: true,
            divergence_ceiling: 1e6,
            channels: DEFAULT_CHANNELS.to_vec(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), FcnError> {
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every == 0 {
            return Err(FcnError::InvalidConfig(
                "batch size, epochs and decay interval must be positive",
            ));
        }
        if !(self.lr0 > 0.0) || !(self.positive_weight > 0.0) {
            return Err(FcnError::InvalidConfig(
                "learning rate and class weight must be positive",
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(FcnError::InvalidConfig("decay factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// `lr0 · decay_factor^⌊epoch / decay_every⌋`.
pub fn lr_at(config: &TrainingConfig, epoch: usize) -> f64 {
    let steps = (epoch / config.decay_every.max(1)) as i32;
    config.lr0 * config.decay_factor.powi(steps)
}

/// Parameter gradients, shaped like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ConvLayer>,
}

impl Gradients {
    fn zeros_like(model: &FcnModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(l.cin, l.cout))
                .collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v *= s);
        }
    }
}

/// Accumulates the summed (unnormalized) weighted cross-entropy of one sample
/// and its gradient. Returns the summed loss.
fn accumulate(
    model: &FcnModel,
    image: &GrayImage,
    label: &BinaryMask,
    positive_weight: f64,
    grads: &mut Gradients,
) -> Result<f64, FcnError> {
    let trace = Trace::run(model, image)?;
    let (h, w) = (trace.h, trace.w);
    let n = h * w;
    let (pw, ph) = (w + 2, h + 2);

    let mut loss = 0.0;
    let mut grad_out = vec![0.0; 2 * n];
    for i in 0..n {
        let (z0, z1) = (trace.logits[i], trace.logits[n + i]);
        let positive = label.data()[i];
        let weight = if positive { positive_weight } else { 1.0 };
        let target = if positive { z1 } else { z0 };
        loss += weight * (lse2(z0, z1) - target);
        let p = softmax2(z0, z1);
        grad_out[i] = weight * (p[0] - f64::from(u8::from(!positive)));
        grad_out[n + i] = weight * (p[1] - f64::from(u8::from(positive)));
    }

    for li in (0..model.layers.len()).rev() {
        let layer = &model.layers[li];
        let input = &trace.inputs[li];
        if li == 0 {
            conv_backward(layer, input, &grad_out, h, w, &mut grads.layers[li], None);
            break;
        }
        let mut grad_in = vec![0.0; layer.cin * ph * pw];
        conv_backward(
            layer,
            input,
            &grad_out,
            h,
            w,
            &mut grads.layers[li],
            Some(&mut grad_in),
        );
        // Through the ReLU that produced this layer's input.
        let mut next = vec![0.0; layer.cin * n];
        for c in 0..layer.cin {
            for y in 0..h {
                for x in 0..w {
                    let pi = (c * ph + y + 1) * pw + x + 1;
                    if input[pi] > 0.0 {
                        next[(c * h + y) * w + x] = grad_in[pi];
                    }
                }
            }
        }
        grad_out = next;
    }
    Ok(loss)
}

/// Mean per-pixel cross-entropy over the batch and its gradient.
pub fn loss_and_grad(
    model: &FcnModel,
    batch: &[LabeledPatch],
) -> Result<(f64, Gradients), FcnError> {
    weighted_loss_and_grad(model, batch, 1.0)
}

/// [`loss_and_grad`] with screw pixels weighted by `positive_weight`; the sum
/// is still divided by the plain pixel count.
pub fn weighted_loss_and_grad(
    model: &FcnModel,
    batch: &[LabeledPatch],
    positive_weight: f64,
) -> Result<(f64, Gradients), FcnError> {
    if batch.is_empty() {
        return Err(FcnError::EmptyBatch);
    }
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    let mut pixels = 0usize;
    for p in batch {
        loss += accumulate(model, &p.image, &p.label, positive_weight, &mut grads)?;
        pixels += p.image.width() * p.image.height();
    }
    let inv = 1.0 / pixels as f64;
    grads.scale(inv);
    Ok((loss * inv, grads))
}

/// Mean per-pixel cross-entropy without gradients.
pub fn batch_loss(model: &FcnModel, batch: &[LabeledPatch]) -> Result<f64, FcnError> {
    if batch.is_empty() {
        return Err(FcnError::EmptyBatch);
    }
    let mut loss = 0.0;
    let mut pixels = 0usize;
    for p in batch {
        let trace = Trace::run(model, &p.image)?;
        let n = trace.h * trace.w;
        for i in 0..n {
            let (z0, z1) = (trace.logits[i], trace.logits[n + i]);
            loss += lse2(z0, z1) - if p.label.data()[i] { z1 } else { z0 };
        }
        pixels += n;
    }
    Ok(loss / pixels as f64)
}

struct Adam {
    m: Vec<ConvLayer>,
    v: Vec<ConvLayer>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &FcnModel) -> Self {
        let z = || {
            model
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(l.cin, l.cout))
                .collect()
        };
        Self {
            m: z(),
            v: z(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut FcnModel, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            let (m, v) = (&mut self.m[li], &mut self.v[li]);
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            for (((p, &gi), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
                *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * gi;
                *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= lr * mhat / (vhat.sqrt() + Self::EPS);
            }
        }
    }
}

/// A trained model with its per-epoch mean training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: FcnModel,
    pub epoch_losses: Vec<f64>,
    pub config: TrainingConfig,
}

/// Trains from a seeded initialization. Shuffling and augmentation draw from a
/// generator seeded by `config.seed`, so the result is bit-reproducible.
pub fn train(config: &TrainingConfig, dataset: &[LabeledPatch]) -> Result<TrainedModel, FcnError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(FcnError::EmptyBatch);
    }
    let mut model = FcnModel::init(&config.channels, config.seed);
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c_4000_0000);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_pixels = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<LabeledPatch> = chunk
                .iter()
                .map(|&i| {
                    if config.augment {
                        dataset[i].dihedral(rng.random_range(0..8u8))
                    } else {
                        dataset[i].clone()
                    }
                })
                .collect();
            let (loss, grads) = weighted_loss_and_grad(&model, &batch, config.positive_weight)?;
            if !loss.is_finite() || loss > config.divergence_ceiling {
                return Err(FcnError::Diverged { epoch, loss });
            }
            let pixels: usize = batch
                .iter()
                .map(|p| p.image.width() * p.image.height())
                .sum();
            epoch_loss += loss * pixels as f64;
            epoch_pixels += pixels;
            adam.step(&mut model, &grads, lr);
            if model.validate().is_err() {
                return Err(FcnError::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        epoch_losses.push(epoch_loss / epoch_pixels as f64);
    }
    Ok(TrainedModel {
        model,
        epoch_losses,
        config: config.clone(),
    })
}

/// `k` models trained with seeds `seed + 0 .. seed + k - 1`; each seed also
/// drives that member's shuffling and augmentation draws.
pub fn make_ensemble(
    config: &TrainingConfig,
    dataset: &[LabeledPatch],
    k: usize,
) -> Result<Vec<TrainedModel>, FcnError> {
    if k == 0 {
        return Err(FcnError::InvalidConfig("ensemble size must be at least 1"));
    }
    (0..k as u64)
        .map(|i| {
            train(
                &TrainingConfig {
                    seed: config.seed.wrapping_add(i),
                    ..config.clone()
                },
                dataset,
            )
        })
        .collect()
}
