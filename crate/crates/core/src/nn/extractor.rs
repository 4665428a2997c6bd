//! Frozen staged feature extractor for perceptual losses.
//!
//! A VGG-style stack: each stage is a run of 3x3 conv + ReLU layers, and
//! stage `i + 1` starts with a 2x2 max-pool of stage `i`'s output. The
//! features of stage `i` are its last ReLU activation, i.e. the activation
//! right before the `i`-th pooling boundary.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{conv3x3, conv3x3_input_grad, pad1};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// ImageNet statistics the pretrained classifiers expect on `[0,1]` input.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub name: String,
    /// Output widths of the convolutions in each stage.
    pub stages: Vec<Vec<usize>>,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ExtractorConfig {
    /// Layer plan of VGG-16's convolutional trunk (five pooling stages).
    pub fn vgg16() -> Self {
        Self {
            name: "vgg16".into(),
            stages: vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 512],
            ],
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }

    /// Five single-conv stages of small width, for tests and offline runs.
    pub fn miniature() -> Self {
        Self {
            name: "miniature".into(),
            stages: vec![vec![8], vec![16], vec![16], vec![32], vec![32]],
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }

    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let mut cin = 3;
        let mut out = Vec::new();
        for stage in &self.stages {
            for &cout in stage {
                out.push((cin, cout));
                cin = cout;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
struct FrozenConv<T> {
    cin: usize,
    cout: usize,
    weight: Vec<T>,
    bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T> {
    config: ExtractorConfig,
    stages: Vec<Vec<FrozenConv<T>>>,
}

struct ConvTape<T> {
    h: usize,
    w: usize,
    out: Tensor<T>,
}

struct StageTape<T> {
    pooled_from: Option<(usize, usize, Vec<usize>)>,
    convs: Vec<ConvTape<T>>,
}

pub struct FeatureTape<T> {
    stages: Vec<StageTape<T>>,
}

fn maxpool2<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h, w);
    let mut arg = vec![0usize; x.c * h * w];
    for c in 0..x.c {
        let src = x.plane(c);
        for y in 0..h {
            for xx in 0..w {
                let mut best = (2 * y) * x.w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (2 * y + dy) * x.w + 2 * xx + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.data[(c * h + y) * w + xx] = src[best];
                arg[(c * h + y) * w + xx] = best;
            }
        }
    }
    (out, arg)
}

impl<T: Real> FeatureExtractor<T> {
    /// Random frozen weights (He-uniform) drawn from `seed`.
    pub fn random(config: ExtractorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut cin = 3;
        for stage in &config.stages {
            let mut convs = Vec::new();
            for &cout in stage {
                let bound = libm::sqrt(6.0 / (cin * 9) as f64);
                let weight = (0..cout * cin * 9).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
                convs.push(FrozenConv {
                    cin,
                    cout,
                    weight,
                    bias: vec![T::zero(); cout],
                });
                cin = cout;
            }
            stages.push(convs);
        }
        Self { config, stages }
    }

    /// The miniature extractor with its fixed seed.
    pub fn miniature() -> Self {
        Self::random(ExtractorConfig::miniature(), 0x5eed_f00d)
    }

    /// Builds an extractor from externally supplied `(weight, bias)` pairs,
    /// one per convolution in layer order (`cout x cin x 3 x 3` weights).
    pub fn from_weights(config: ExtractorConfig, weights: Vec<(Vec<f32>, Vec<f32>)>) -> Result<Self> {
        let shapes = config.conv_shapes();
        if shapes.len() != weights.len() {
            return Err(Error::contract(format!(
                "extractor needs {} convolutions, got {}",
                shapes.len(),
                weights.len()
            )));
        }
        let mut it = shapes.into_iter().zip(weights);
        let mut stages = Vec::new();
        for stage in &config.stages {
            let mut convs = Vec::new();
            for _ in stage {
                let ((cin, cout), (w, b)) = it.next().expect("counted above");
                if w.len() != cout * cin * 9 || b.len() != cout {
                    return Err(Error::contract(format!(
                        "convolution {cin}->{cout} has mismatched weight sizes"
                    )));
                }
                convs.push(FrozenConv {
                    cin,
                    cout,
                    weight: w.iter().map(|v| T::lit(*v as f64)).collect(),
                    bias: b.iter().map(|v| T::lit(*v as f64)).collect(),
                });
            }
            stages.push(convs);
        }
        Ok(Self { config, stages })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    fn normalize(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.c != 3 {
            return Err(Error::contract("feature extractor expects 3-channel input"));
        }
        let mut out = x.clone();
        for c in 0..3 {
            let (m, s) = (self.config.mean[c], self.config.std[c]);
            let (a, b) = (T::lit(0.5 / s), T::lit((0.5 - m) / s));
            for v in out.plane_mut(c) {
                *v = *v * a + b;
            }
        }
        Ok(out)
    }

    /// Stage features of a `[-1, 1]` image (no tape).
    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(self.forward(x)?.0)
    }

    /// Stage features plus the activations needed for [`Self::backward`].
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Vec<Tensor<T>>, FeatureTape<T>)> {
        let mut cur = self.normalize(x)?;
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut tapes = Vec::with_capacity(self.stages.len());
        for (si, stage) in self.stages.iter().enumerate() {
            let pooled_from = if si > 0 {
                let prev: &Tensor<T> = feats.last().expect("previous stage");
                if prev.h < 2 || prev.w < 2 {
                    return Err(Error::contract("input too small for the extractor's pooling stages"));
                }
                let (p, arg) = maxpool2(prev);
                let info = (prev.h, prev.w, arg);
                cur = p;
                Some(info)
            } else {
                None
            };
            let mut convs = Vec::with_capacity(stage.len());
            for conv in stage {
                let xp = pad1(&cur);
                let mut out = conv3x3(&xp, conv.cin, cur.h, cur.w, &conv.weight, Some(&conv.bias), conv.cout, 1);
                out.data.iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v = T::zero()
                    }
                });
                convs.push(ConvTape {
                    h: cur.h,
                    w: cur.w,
                    out: out.clone(),
                });
                cur = out;
            }
            feats.push(cur.clone());
            tapes.push(StageTape { pooled_from, convs });
        }
        Ok((feats, FeatureTape { stages: tapes }))
    }

    /// Input gradient given per-stage feature gradients (`None` = zero).
    pub fn backward(&self, tape: &FeatureTape<T>, dfeats: &[Option<Tensor<T>>]) -> Tensor<T> {
        let last = dfeats.iter().rposition(|d| d.is_some());
        let first = &tape.stages[0].convs[0];
        let Some(last) = last else {
            return Tensor::zeros(3, first.h, first.w);
        };
        let mut carry: Option<Tensor<T>> = None;
        for si in (0..=last).rev() {
            let st = &tape.stages[si];
            let top = st.convs.last().expect("stage has convolutions");
            let mut d = match (&dfeats[si], carry.take()) {
                (Some(a), Some(mut b)) => {
                    b.add_assign(a);
                    b
                }
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b,
                (None, None) => Tensor::zeros(top.out.c, top.out.h, top.out.w),
            };
            for (conv, ct) in self.stages[si].iter().zip(&st.convs).rev() {
                for (g, o) in d.data.iter_mut().zip(&ct.out.data) {
                    if *o <= T::zero() {
                        *g = T::zero();
                    }
                }
                d = conv3x3_input_grad(&d, &conv.weight, conv.cin, ct.h, ct.w, 1);
            }
            if let Some((h, w, arg)) = &st.pooled_from {
                let mut up = Tensor::zeros(d.c, *h, *w);
                let n = d.h * d.w;
                for c in 0..d.c {
                    for i in 0..n {
                        up.data[c * h * w + arg[c * n + i]] += d.data[c * n + i];
                    }
                }
                carry = Some(up);
            } else {
                carry = Some(d);
            }
        }
        let mut dx = carry.expect("stage 0 processed");
        for c in 0..3 {
            let s = T::lit(0.5 / self.config.std[c]);
            dx.plane_mut(c).iter_mut().for_each(|v| *v *= s);
        }
        dx
    }
}
