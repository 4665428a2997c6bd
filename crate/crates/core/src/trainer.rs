//! Training protocol: augmentation, the two-pass loss, and optimizer steps.
//!
//! Network-space conventions: `src`, `dlt` and `soft` are mapped from
//! `[0, 1]` to `[-1, 1]`; the offset planes are already differences of unit
//! images and are used as they are.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasynth::TrainingSample;
use crate::error::{Error, Result};
use crate::image::{MaskImage, RasterImage, ValueRange};
use crate::imaging::{crop, crop_mask, flip_horizontal, flip_mask, resize, resize_mask, Window};
use crate::losses::{perceptual_with_grad, soft_term_with_grad, LossBreakdown, LossSwitches};
use crate::nn::{Adam, AdamConfig, DelightModel, FeatureExtractor, Real, Tensor};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Inclusive bounds of the square crop side in pixels; `None` keeps the
    /// whole frame.
    pub crop_range: Option<[usize; 2]>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            crop_range: Some([280, 480]),
        }
    }
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig {
        flip_prob: 0.0,
        crop_range: None,
    };

    /// Defaults with the crop bounds scaled from 480 px to `size`.
    pub fn scaled_to(size: usize) -> AugmentConfig {
        let lo = (280 * size).div_ceil(480).max(1);
        AugmentConfig {
            flip_prob: 0.5,
            crop_range: Some([lo, size]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub resolution: usize,
    pub switches: LossSwitches,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Alternate source-image and soft-image passes between steps instead
    /// of summing both in every step.
    pub soft_alternate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            learning_rate: 2e-4,
            batch_size: 8,
            resolution: 256,
            switches: LossSwitches::default(),
            seed: 0,
            augment: AugmentConfig::default(),
            soft_alternate: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.resolution == 0 {
            return Err(Error::contract("epochs, batch size and resolution must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.augment.flip_prob) {
            return Err(Error::contract("flip probability must lie in [0, 1]"));
        }
        if let Some([lo, hi]) = self.augment.crop_range {
            if lo == 0 || lo > hi {
                return Err(Error::contract("crop range must be positive and ordered"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// The geometric part of an augmentation, applied identically to every plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentPlan {
    pub window: Window,
    pub flip: bool,
}

pub fn plan_augment(height: usize, width: usize, config: &AugmentConfig, rng: &mut impl Rng) -> Result<AugmentPlan> {
    let window = match config.crop_range {
        None => Window {
            top: 0,
            left: 0,
            height,
            width,
        },
        Some([lo, hi]) => {
            if hi > height.min(width) {
                return Err(Error::contract(format!(
                    "crop window up to {hi} px does not fit a {height}x{width} image"
                )));
            }
            let side = rng.gen_range(lo..=hi);
            let top = rng.gen_range(0..=height - side);
            let left = rng.gen_range(0..=width - side);
            Window::square(top, left, side)
        }
    };
    let flip = config.flip_prob > 0.0 && rng.gen_bool(config.flip_prob);
    Ok(AugmentPlan { window, flip })
}

/// Applies a plan to every plane and resizes to `resolution`. The
/// foreground is resampled, re-binarized at 0.5, and every plane is
/// re-masked by it.
pub fn apply_augment(sample: &TrainingSample, plan: &AugmentPlan, resolution: usize) -> Result<TrainingSample> {
    let img = |x: &RasterImage| -> Result<RasterImage> {
        let r = resize(&crop(x, plan.window)?, resolution, resolution)?;
        Ok(if plan.flip { flip_horizontal(&r) } else { r })
    };
    let mask = |m: &MaskImage| -> Result<MaskImage> {
        let r = resize_mask(&crop_mask(m, plan.window)?, resolution, resolution)?;
        Ok(if plan.flip { flip_mask(&r) } else { r })
    };
    let fg = mask(&sample.foreground)?.binarize(0.5);
    let fg_count = fg.count_nonzero();
    if fg_count == 0 {
        return Err(Error::contract("augmented crop contains no foreground"));
    }
    let unit = |x: &RasterImage| img(x)?.masked(&fg, 0.0);
    Ok(TrainingSample {
        src: unit(&sample.src)?,
        dlt: unit(&sample.dlt)?,
        off: unit(&sample.off)?,
        soft: unit(&sample.soft)?,
        soft_off: unit(&sample.soft_off)?,
        hf_mask: mask(&sample.hf_mask)?.zip_map(&fg, |w, f| w * f)?,
        foreground: fg,
        fg_count,
    })
}

/// Random crop and flip (per `config`), then resize to `resolution`.
pub fn augment(
    sample: &TrainingSample,
    rng: &mut impl Rng,
    config: &AugmentConfig,
    resolution: usize,
) -> Result<TrainingSample> {
    let plan = plan_augment(sample.height(), sample.width(), config, rng)?;
    apply_augment(sample, &plan, resolution)
}

/// A training sample with an identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub sample: TrainingSample,
}

/// A sample converted to network space.
#[derive(Clone, Debug)]
pub struct NetSample<T> {
    pub id: String,
    pub src: Tensor<T>,
    pub dlt: Tensor<T>,
    pub off: Tensor<T>,
    pub soft: Tensor<T>,
    pub soft_off: Tensor<T>,
    pub hf_mask: MaskImage,
    pub fg_count: usize,
}

impl<T: Real> NetSample<T> {
    pub fn new(id: &str, s: &TrainingSample) -> Self {
        NetSample {
            id: id.into(),
            src: Tensor::from_image(&s.src.to_signed()),
            dlt: Tensor::from_image(&s.dlt.to_signed()),
            off: Tensor::from_image(&s.off),
            soft: Tensor::from_image(&s.soft.to_signed()),
            soft_off: Tensor::from_image(&s.soft_off),
            hf_mask: s.hf_mask.clone(),
            fg_count: s.fg_count,
        }
    }
}

/// Unit-range image to a network input tensor.
pub fn image_to_input<T: Real>(img: &RasterImage) -> Tensor<T> {
    Tensor::from_image(&img.to_signed())
}

/// Network output back to a unit-range image.
pub fn output_to_image<T: Real>(t: &Tensor<T>) -> Result<RasterImage> {
    Ok(t.to_image(ValueRange::Signed)?.to_unit())
}

/// Which forward passes a step runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Passes {
    Both,
    SourceOnly,
    SoftOnly,
}

/// Loss terms of one sample and, when `grads` is given, their parameter
/// gradients accumulated into it. Disabled terms are exactly zero and
/// contribute nothing to the gradient.
pub fn sample_loss<T: Real>(
    model: &DelightModel,
    ext: &FeatureExtractor<T>,
    params: &[T],
    s: &NetSample<T>,
    switches: LossSwitches,
    passes: Passes,
    mut grads: Option<&mut [T]>,
) -> Result<LossBreakdown> {
    let (mut l_dlt, mut l_off, mut l_sd, mut l_so, mut l_msk) = (0.0, 0.0, 0.0, 0.0, 0.0);
    if passes != Passes::SoftOnly {
        let (out, tape) = model.forward(params, &s.src, switches.off)?;
        let mask = if switches.msk { Some(&s.hf_mask) } else { None };
        let d = perceptual_with_grad(ext, &s.dlt, &out.dlt, s.fg_count, mask)?;
        l_dlt = d.perceptual.as_f64();
        l_msk = d.masked.map_or(0.0, |m| m.as_f64());
        let off_grad = match &out.off {
            Some(pred) => {
                let o = perceptual_with_grad(ext, &s.off, pred, s.fg_count, None)?;
                l_off = o.perceptual.as_f64();
                Some(o.grad)
            }
            None => None,
        };
        if let Some(g) = grads.as_deref_mut() {
            model.backward(params, g, &tape, Some(&d.grad), off_grad.as_ref())?;
        }
    }
    if switches.soft && passes != Passes::SourceOnly {
        let (out, tape) = model.forward(params, &s.soft, true)?;
        let off = out.off.as_ref().expect("offset decoder requested");
        let (a, ga) = soft_term_with_grad(&s.dlt, &out.dlt, s.fg_count)?;
        let (b, gb) = soft_term_with_grad(&s.soft_off, off, s.fg_count)?;
        l_sd = a.as_f64();
        l_so = b.as_f64();
        if let Some(g) = grads {
            model.backward(params, g, &tape, Some(&ga), Some(&gb))?;
        }
    }
    Ok(LossBreakdown::new(l_dlt, l_off, l_sd, l_so, l_msk))
}

/// Batch order of one epoch: a seeded shuffle cut into `batch_size` chunks
/// (the last one may be short).
pub fn epoch_batches(count: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng::stream(seed, "epoch-order", epoch as u64));
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Augments the selected examples for `epoch` and converts them to network space.
pub fn prepare_batch<T: Real>(
    examples: &[Example],
    indices: &[usize],
    epoch: usize,
    config: &TrainConfig,
) -> Result<Vec<NetSample<T>>> {
    indices
        .iter()
        .map(|&i| {
            let ex = examples.get(i).ok_or_else(|| Error::contract("batch index out of range"))?;
            let mut r = rng::stream(config.seed, &ex.id, 1 + epoch as u64);
            let s = augment(&ex.sample, &mut r, &config.augment, config.resolution)?;
            Ok(NetSample::new(&ex.id, &s))
        })
        .collect()
}

/// Model, frozen extractor, parameters and optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: DelightModel,
    pub extractor: FeatureExtractor<T>,
    pub params: Vec<T>,
    pub adam: Adam<T>,
    pub config: TrainConfig,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: DelightModel, extractor: FeatureExtractor<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = model.init_params();
        let adam = Adam::new(config.adam(), params.len());
        Ok(Trainer {
            model,
            extractor,
            params,
            adam,
            config,
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    fn passes(&self) -> Passes {
        if !self.config.switches.soft {
            Passes::SourceOnly
        } else if self.config.soft_alternate {
            if self.adam.step.is_multiple_of(2) {
                Passes::SourceOnly
            } else {
                Passes::SoftOnly
            }
        } else {
            Passes::Both
        }
    }

    /// Batch-mean losses and gradients at the current parameters.
    pub fn loss_and_grad(&self, batch: &[NetSample<T>]) -> Result<(LossBreakdown, Vec<T>)> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let passes = self.passes();
        let mut grads = vec![T::zero(); self.params.len()];
        let mut total = LossBreakdown::default();
        for s in batch {
            let b = sample_loss(
                &self.model,
                &self.extractor,
                &self.params,
                s,
                self.config.switches,
                passes,
                Some(&mut grads),
            )?;
            if !b.is_finite() {
                return Err(Error::NonFinite {
                    sample: s.id.clone(),
                    detail: format!("{b:?}"),
                });
            }
            total.accumulate(&b);
        }
        let k = T::lit(1.0 / batch.len() as f64);
        for g in grads.iter_mut() {
            *g *= k;
        }
        if let Some(i) = grads.iter().position(|g| !g.as_f64().is_finite()) {
            return Err(Error::NonFinite {
                sample: batch.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(","),
                detail: format!("gradient of parameter {i} is not finite"),
            });
        }
        Ok((total.scaled(1.0 / batch.len() as f64), grads))
    }

    /// One optimizer update on the summed loss of the batch; returns the
    /// batch-mean breakdown before the update.
    pub fn train_step(&mut self, batch: &[NetSample<T>]) -> Result<LossBreakdown> {
        let (loss, grads) = self.loss_and_grad(batch)?;
        self.adam.update(&mut self.params, &grads);
        Ok(loss)
    }

    /// Batch-mean losses without touching the parameters.
    pub fn eval_loss(&self, batch: &[NetSample<T>]) -> Result<LossBreakdown> {
        let mut total = LossBreakdown::default();
        for s in batch {
            total.accumulate(&sample_loss(
                &self.model,
                &self.extractor,
                &self.params,
                s,
                self.config.switches,
                Passes::Both,
                None,
            )?);
        }
        Ok(total.scaled(1.0 / batch.len().max(1) as f64))
    }

    /// De-lit prediction for a unit-range image whose size suits the model.
    pub fn delight(&self, img: &RasterImage) -> Result<RasterImage> {
        output_to_image(&self.model.infer(&self.params, &image_to_input::<T>(img))?)
    }
}

/// One sampled parameter of a gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradProbe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares analytic gradients of the total loss on one sample against
/// central differences with step `h` at the given parameter indices.
pub fn gradient_check(
    model: &DelightModel,
    ext: &FeatureExtractor<f64>,
    params: &[f64],
    sample: &NetSample<f64>,
    switches: LossSwitches,
    indices: &[usize],
    h: f64,
) -> Result<Vec<GradProbe>> {
    let mut grads = vec![0.0; params.len()];
    sample_loss(model, ext, params, sample, switches, Passes::Both, Some(&mut grads))?;
    let mut p = params.to_vec();
    indices
        .iter()
        .map(|&i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = sample_loss(model, ext, &p, sample, switches, Passes::Both, None)?.total;
            p[i] = orig - h;
            let down = sample_loss(model, ext, &p, sample, switches, Passes::Both, None)?.total;
            p[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            Ok(GradProbe {
                index: i,
                analytic: grads[i],
                numeric,
                rel_error: relative_error(grads[i], numeric, 1e-8),
            })
        })
        .collect()
}
