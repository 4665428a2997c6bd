//! Perceptual, shading-offset, soft-shadow and masked losses.
//!
//! All losses compare network-space tensors (`[-1, 1]`). Feature distances
//! go through a frozen [`FeatureExtractor`]; pixel terms are plain L1 sums
//! normalized by the foreground pixel count `M`.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::MaskImage;
use crate::imaging::geometry::resize_mask;
use crate::nn::extractor::FeatureExtractor;
use crate::nn::{Real, Tensor};

/// Weight of the pixel L1 term of the perceptual loss, per foreground pixel.
pub const PIXEL_WEIGHT: f64 = 0.2;
/// Weight of both soft-shadow L1 terms, per foreground pixel.
pub const SOFT_WEIGHT: f64 = 0.6;
/// Number of leading extractor stages the masked loss uses.
pub const MASKED_STAGES: usize = 3;
/// Stages whose resized mask sums below this contribute nothing.
pub const MASK_SUM_FLOOR: f64 = 1e-6;

/// Per-term loss values and their unweighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_dlt: f64,
    pub l_off: f64,
    pub l_soft_dlt: f64,
    pub l_soft_off: f64,
    pub l_msk: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_dlt: f64, l_off: f64, l_soft_dlt: f64, l_soft_off: f64, l_msk: f64) -> Self {
        Self {
            l_dlt,
            l_off,
            l_soft_dlt,
            l_soft_off,
            l_msk,
            total: l_dlt + l_off + l_soft_dlt + l_soft_off + l_msk,
        }
    }

    pub fn terms(&self) -> [f64; 5] {
        [self.l_dlt, self.l_off, self.l_soft_dlt, self.l_soft_off, self.l_msk]
    }

    /// Adds `other` term by term (total is recomputed from the terms).
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        *self = LossBreakdown::new(
            self.l_dlt + other.l_dlt,
            self.l_off + other.l_off,
            self.l_soft_dlt + other.l_soft_dlt,
            self.l_soft_off + other.l_soft_off,
            self.l_msk + other.l_msk,
        );
    }

    pub fn scaled(&self, k: f64) -> LossBreakdown {
        let t = self.terms();
        LossBreakdown::new(t[0] * k, t[1] * k, t[2] * k, t[3] * k, t[4] * k)
    }

    pub fn is_finite(&self) -> bool {
        self.terms().iter().all(|v| v.is_finite()) && self.total.is_finite()
    }
}

/// Which optional terms take part in the objective. The de-lit term is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSwitches {
    pub off: bool,
    pub soft: bool,
    pub msk: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        Self {
            off: true,
            soft: true,
            msk: true,
        }
    }
}

impl LossSwitches {
    /// The cumulative ablation rows: A = de-lit only, B = +offset,
    /// C = +soft-shadow, D = +masked (full objective).
    pub fn ablation_row(row: char) -> Option<Self> {
        let (off, soft, msk) = match row.to_ascii_uppercase() {
            'A' => (false, false, false),
            'B' => (true, false, false),
            'C' => (true, true, false),
            'D' => (true, true, true),
            _ => return None,
        };
        Some(Self { off, soft, msk })
    }
}

fn require_fg(fg_count: usize) -> Result<()> {
    if fg_count == 0 {
        return Err(Error::contract("foreground pixel count M must be positive"));
    }
    Ok(())
}

fn require_same<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            what: "loss operands",
            expected: (a.h, a.w, a.c),
            got: (b.h, b.w, b.c),
        });
    }
    Ok(())
}

/// `sum |pred - target|`, and `sign(pred - target)` when `grad` is set.
fn l1<T: Real>(target: &[T], pred: &[T], grad: Option<&mut [T]>, scale: T) -> T {
    let mut s = T::zero();
    match grad {
        Some(g) => {
            for i in 0..pred.len() {
                let d = pred[i] - target[i];
                s += d.abs();
                if d > T::zero() {
                    g[i] += scale;
                } else if d < T::zero() {
                    g[i] -= scale;
                }
            }
        }
        None => {
            for i in 0..pred.len() {
                s += (pred[i] - target[i]).abs();
            }
        }
    }
    s
}

/// Weight mask resized to each of the first stages, with its sum.
pub struct StageMasks<T> {
    planes: Vec<(Vec<T>, T)>,
}

impl<T: Real> StageMasks<T> {
    pub fn new(mask: &MaskImage, stage_sizes: &[(usize, usize)]) -> Result<Self> {
        let planes = stage_sizes
            .iter()
            .take(MASKED_STAGES)
            .map(|&(h, w)| {
                let r = resize_mask(mask, h, w)?;
                let plane: Vec<T> = r.data().iter().map(|v| T::lit(*v as f64)).collect();
                let s = plane.iter().copied().sum();
                Ok((plane, s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { planes })
    }
}

fn masked_stage<T: Real>(
    target: &Tensor<T>,
    pred: &Tensor<T>,
    weights: &[T],
    sum: T,
    grad: Option<&mut Tensor<T>>,
) -> T {
    if sum.as_f64() < MASK_SUM_FLOOR {
        return T::zero();
    }
    let n = pred.h * pred.w;
    let inv = T::one() / sum;
    let mut s = T::zero();
    let mut grad = grad;
    for c in 0..pred.c {
        let (tp, pp) = (target.plane(c), pred.plane(c));
        for i in 0..n {
            let d = pp[i] - tp[i];
            s += weights[i] * d.abs();
            if let Some(g) = grad.as_deref_mut() {
                let gp = &mut g.data[c * n + i];
                if d > T::zero() {
                    *gp += weights[i] * inv;
                } else if d < T::zero() {
                    *gp -= weights[i] * inv;
                }
            }
        }
    }
    s * inv
}

fn check_features<T: Real>(tf: &[Tensor<T>], pf: &[Tensor<T>]) -> Result<()> {
    if tf.len() != pf.len() || tf.iter().zip(pf).any(|(a, b)| !a.same_shape(b)) {
        return Err(Error::contract("feature stacks differ in shape"));
    }
    Ok(())
}

/// `sum_i (1/N_i) |F_i(A) - F_i(B)|_1 + (0.2 / M) |A - B|_1` over all stages.
pub fn perceptual_loss<T: Real>(ext: &FeatureExtractor<T>, a: &Tensor<T>, b: &Tensor<T>, fg_count: usize) -> Result<T> {
    require_fg(fg_count)?;
    require_same(a, b)?;
    let fa = ext.features(a)?;
    let fb = ext.features(b)?;
    check_features(&fa, &fb)?;
    let mut total = T::zero();
    for (x, y) in fa.iter().zip(&fb) {
        total += l1(&x.data, &y.data, None, T::zero()) / T::lit(x.data.len() as f64);
    }
    Ok(total + T::lit(PIXEL_WEIGHT / fg_count as f64) * l1(&a.data, &b.data, None, T::zero()))
}

/// De-lit loss: perceptual distance between the target and the de-lit output.
pub fn delit_loss<T: Real>(ext: &FeatureExtractor<T>, dlt_gt: &Tensor<T>, d1_out: &Tensor<T>, fg_count: usize) -> Result<T> {
    perceptual_loss(ext, dlt_gt, d1_out, fg_count)
}

/// Shading-offset loss: perceptual distance on offset images. Offsets
/// share the extractor's `(x + 1) / 2` input mapping with images.
pub fn offset_loss<T: Real>(ext: &FeatureExtractor<T>, off_gt: &Tensor<T>, d2_out: &Tensor<T>, fg_count: usize) -> Result<T> {
    perceptual_loss(ext, off_gt, d2_out, fg_count)
}

/// The two soft-shadow regularizers `(0.6/M)|I_dlt - D1(soft)|_1` and
/// `(0.6/M)|I_soft_off - D2(soft)|_1`.
pub fn soft_losses<T: Real>(
    dlt_gt: &Tensor<T>,
    soft_off_gt: &Tensor<T>,
    d1_soft: &Tensor<T>,
    d2_soft: &Tensor<T>,
    fg_count: usize,
) -> Result<(T, T)> {
    require_fg(fg_count)?;
    require_same(dlt_gt, d1_soft)?;
    require_same(soft_off_gt, d2_soft)?;
    let k = T::lit(SOFT_WEIGHT / fg_count as f64);
    Ok((
        k * l1(&dlt_gt.data, &d1_soft.data, None, T::zero()),
        k * l1(&soft_off_gt.data, &d2_soft.data, None, T::zero()),
    ))
}

/// `sum_{i<=3} (1/S_i) |W_i * (F_i(I_dlt) - F_i(D1(I_src)))|_1`.
pub fn masked_loss<T: Real>(ext: &FeatureExtractor<T>, dlt_gt: &Tensor<T>, d1_out: &Tensor<T>, w: &MaskImage) -> Result<T> {
    require_same(dlt_gt, d1_out)?;
    if w.height() != dlt_gt.h || w.width() != dlt_gt.w {
        return Err(Error::contract("weight mask does not match the image size"));
    }
    let ft = ext.features(dlt_gt)?;
    let fp = ext.features(d1_out)?;
    check_features(&ft, &fp)?;
    let sizes: Vec<(usize, usize)> = ft.iter().map(|t| (t.h, t.w)).collect();
    let masks = StageMasks::<T>::new(w, &sizes)?;
    let mut total = T::zero();
    for (i, (plane, s)) in masks.planes.iter().enumerate() {
        total += masked_stage(&ft[i], &fp[i], plane, *s, None);
    }
    Ok(total)
}

/// Assembles the breakdown; the total is the plain sum of the five terms.
pub fn total_loss(l_dlt: f64, l_off: f64, l_soft_dlt: f64, l_soft_off: f64, l_msk: f64) -> LossBreakdown {
    LossBreakdown::new(l_dlt, l_off, l_soft_dlt, l_soft_off, l_msk)
}

/// Perceptual (and optionally masked) loss of `pred` against a target,
/// with the gradient of their sum with respect to `pred`.
pub struct PerceptualGrad<T> {
    pub perceptual: T,
    pub masked: Option<T>,
    pub grad: Tensor<T>,
}

/// Evaluates the perceptual loss (and the masked loss when `mask` is given)
/// sharing one feature pass of `target` and `pred`.
pub fn perceptual_with_grad<T: Real>(
    ext: &FeatureExtractor<T>,
    target: &Tensor<T>,
    pred: &Tensor<T>,
    fg_count: usize,
    mask: Option<&MaskImage>,
) -> Result<PerceptualGrad<T>> {
    require_fg(fg_count)?;
    require_same(target, pred)?;
    let ft = ext.features(target)?;
    let (fp, tape) = ext.forward(pred)?;
    check_features(&ft, &fp)?;
    let mut dfeats: Vec<Option<Tensor<T>>> = Vec::with_capacity(fp.len());
    let mut perceptual = T::zero();
    for (a, b) in ft.iter().zip(&fp) {
        let inv_n = T::one() / T::lit(a.data.len() as f64);
        let mut g = Tensor::zeros(b.c, b.h, b.w);
        perceptual += l1(&a.data, &b.data, Some(&mut g.data), inv_n) * inv_n;
        dfeats.push(Some(g));
    }
    let masked = match mask {
        Some(w) => {
            if w.height() != target.h || w.width() != target.w {
                return Err(Error::contract("weight mask does not match the image size"));
            }
            let sizes: Vec<(usize, usize)> = fp.iter().map(|t| (t.h, t.w)).collect();
            let masks = StageMasks::<T>::new(w, &sizes)?;
            let mut m = T::zero();
            for (i, (plane, s)) in masks.planes.iter().enumerate() {
                m += masked_stage(&ft[i], &fp[i], plane, *s, dfeats[i].as_mut());
            }
            Some(m)
        }
        None => None,
    };
    let mut grad = ext.backward(&tape, &dfeats);
    let k = T::lit(PIXEL_WEIGHT / fg_count as f64);
    perceptual += k * l1(&target.data, &pred.data, Some(&mut grad.data), k);
    Ok(PerceptualGrad {
        perceptual,
        masked,
        grad,
    })
}

/// Soft-shadow L1 term with its gradient with respect to `pred`.
pub fn soft_term_with_grad<T: Real>(target: &Tensor<T>, pred: &Tensor<T>, fg_count: usize) -> Result<(T, Tensor<T>)> {
    require_fg(fg_count)?;
    require_same(target, pred)?;
    let k = T::lit(SOFT_WEIGHT / fg_count as f64);
    let mut grad = Tensor::zeros(pred.c, pred.h, pred.w);
    let v = k * l1(&target.data, &pred.data, Some(&mut grad.data), k);
    Ok((v, grad))
}

/// Sum of a stage's feature L1 restricted by an explicit normalizer; used to
/// check mask monotonicity without the `S_i` renormalization.
pub fn masked_stage_sum_fixed<T: Real>(target: &Tensor<T>, pred: &Tensor<T>, weights: &[T]) -> T {
    let n = pred.h * pred.w;
    let mut s = T::zero();
    for c in 0..pred.c {
        for i in 0..n {
            s += weights[i] * (pred.plane(c)[i] - target.plane(c)[i]).abs();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use alloc::vec;
    use super::*;

    fn ramp(seed: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(3, h, w, (0..3 * h * w).map(|i| ((((i + seed) * 37) % 97) as f64) / 48.5 - 1.0).collect())
    }

    #[test]
    fn identical_inputs_have_zero_loss() {
        let ext = FeatureExtractor::<f64>::miniature();
        let a = ramp(1, 32, 32);
        assert_eq!(perceptual_loss(&ext, &a, &a, 100).unwrap(), 0.0);
        let w = MaskImage::new(32, 32, vec![0.5; 1024]).unwrap();
        assert_eq!(masked_loss(&ext, &a, &a, &w).unwrap(), 0.0);
        assert_eq!(soft_losses(&a, &a, &a, &a, 10).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn zero_foreground_is_rejected() {
        let ext = FeatureExtractor::<f64>::miniature();
        let a = ramp(1, 32, 32);
        assert!(perceptual_loss(&ext, &a, &a, 0).is_err());
        assert!(soft_losses(&a, &a, &a, &a, 0).is_err());
    }

    #[test]
    fn empty_mask_contributes_nothing() {
        let ext = FeatureExtractor::<f64>::miniature();
        let (a, b) = (ramp(1, 32, 32), ramp(5, 32, 32));
        let w = MaskImage::zeros(32, 32).unwrap();
        assert_eq!(masked_loss(&ext, &a, &b, &w).unwrap(), 0.0);
    }

    #[test]
    fn soft_single_pixel_arithmetic() {
        let a = Tensor::<f64>::zeros(3, 4, 4);
        let mut b = a.clone();
        b.data[21] = 0.25;
        let (l1v, l2v) = soft_losses(&a, &a, &b, &a, 7).unwrap();
        assert!((l1v - 0.6 * 0.25 / 7.0).abs() < 1e-15);
        assert_eq!(l2v, 0.0);
    }

    #[test]
    fn breakdown_total_is_sum() {
        let b = total_loss(0.5, 0.25, 0.125, 0.0625, 1.0);
        assert_eq!(b.total, 1.9375);
        assert_eq!(LossSwitches::ablation_row('a'), Some(LossSwitches { off: false, soft: false, msk: false }));
        assert_eq!(LossSwitches::ablation_row('D'), Some(LossSwitches::default()));
        assert_eq!(LossSwitches::ablation_row('E'), None);
    }

    #[test]
    fn gradient_version_agrees_with_values() {
        let ext = FeatureExtractor::<f64>::miniature();
        let (a, b) = (ramp(2, 16, 16), ramp(9, 16, 16));
        let w = MaskImage::from_fn(16, 16, |_, x| if x < 8 { 1.0 } else { 0.0 }).unwrap();
        let g = perceptual_with_grad(&ext, &a, &b, 50, Some(&w)).unwrap();
        assert!((g.perceptual - perceptual_loss(&ext, &a, &b, 50).unwrap()).abs() < 1e-12);
        assert!((g.masked.unwrap() - masked_loss(&ext, &a, &b, &w).unwrap()).abs() < 1e-12);
        // central differences on a few prediction entries
        let f = |p: &Tensor<f64>| perceptual_loss(&ext, &a, p, 50).unwrap() + masked_loss(&ext, &a, p, &w).unwrap();
        for probe in [0usize, 100, 400, 767] {
            let mut bp = b.clone();
            bp.data[probe] += 1e-6;
            let mut bm = b.clone();
            bm.data[probe] -= 1e-6;
            let fd = (f(&bp) - f(&bm)) / 2e-6;
            assert!((fd - g.grad.data[probe]).abs() < 1e-5 * (1.0 + fd.abs()), "{probe}: {fd} vs {}", g.grad.data[probe]);
        }
    }

    #[test]
    fn swapping_arguments_is_symmetric() {
        let ext = FeatureExtractor::<f64>::miniature();
        let (a, b) = (ramp(3, 32, 32), ramp(11, 32, 32));
        let ab = perceptual_loss(&ext, &a, &b, 300).unwrap();
        let ba = perceptual_loss(&ext, &b, &a, 300).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0);
    }
}
