//! Image-quality metrics and the per-image / aggregate report.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{MaskImage, RasterImage};
use crate::imaging::filters::gaussian_kernel;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f32 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Rec. 709 luma weights used to reduce RGB before SSIM.
pub const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const METRIC_POLICY: &str = "rmse over foreground pixels; ssim and li_ssim on full-frame Rec.709 luma with black background, 11x11 gaussian window (sigma 1.5), valid positions only";

/// Root mean square of per-channel differences over foreground pixels.
pub fn rmse(a: &RasterImage, b: &RasterImage, fg: &MaskImage) -> Result<f64> {
    a.ensure_same_size(b, "metric operand")?;
    if a.channels() != b.channels() {
        return Err(Error::contract("metric operands differ in channel count"));
    }
    if fg.height() != a.height() || fg.width() != a.width() {
        return Err(Error::contract("foreground mask does not match the image size"));
    }
    let c = a.channels();
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (p, m) in fg.data().iter().enumerate() {
        if *m == 0.0 {
            continue;
        }
        for ch in 0..c {
            let d = (a.data()[p * c + ch] - b.data()[p * c + ch]) as f64;
            sum += d * d;
        }
        n += c;
    }
    if n == 0 {
        return Err(Error::contract("foreground is empty"));
    }
    Ok(libm::sqrt(sum / n as f64))
}

fn luma(img: &RasterImage) -> Vec<f64> {
    let c = img.channels();
    img.data()
        .chunks(c)
        .map(|px| {
            if c == 1 {
                px[0] as f64
            } else {
                LUMA.iter().zip(px).map(|(k, v)| k * *v as f64).sum()
            }
        })
        .collect()
}

/// Separable valid-mode correlation.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean li-SSIM (luminance term dropped) of two images.
pub fn ssim_pair(a: &RasterImage, b: &RasterImage) -> Result<(f64, f64)> {
    a.ensure_same_size(b, "metric operand")?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract("image is smaller than the SSIM window"));
    }
    let (x, y) = (luma(a), luma(b));
    let k = gaussian_kernel(SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let (mx, _, _) = filter_valid(&x, h, w, &k);
    let (my, _, _) = filter_valid(&y, h, w, &k);
    let (mxx, _, _) = filter_valid(&prod(&x, &x), h, w, &k);
    let (myy, _, _) = filter_valid(&prod(&y, &y), h, w, &k);
    let (mxy, oh, ow) = filter_valid(&prod(&x, &y), h, w, &k);
    let (mut s, mut li) = (0.0, 0.0);
    for i in 0..oh * ow {
        let vx = mxx[i] - mx[i] * mx[i];
        let vy = myy[i] - my[i] * my[i];
        let cov = mxy[i] - mx[i] * my[i];
        let cs = (2.0 * cov + SSIM_C2) / (vx + vy + SSIM_C2);
        let l = (2.0 * mx[i] * my[i] + SSIM_C1) / (mx[i] * mx[i] + my[i] * my[i] + SSIM_C1);
        s += l * cs;
        li += cs;
    }
    let n = (oh * ow) as f64;
    Ok((s / n, li / n))
}

pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    Ok(ssim_pair(a, b)?.0)
}

pub fn li_ssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    Ok(ssim_pair(a, b)?.1)
}

/// A learned perceptual distance supplied from outside (e.g. LPIPS).
pub trait PerceptualMetric {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    fn distance(&self, a: &RasterImage, b: &RasterImage) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub rmse: Option<f64>,
    pub ssim: Option<f64>,
    pub li_ssim: Option<f64>,
    pub lpips: Option<f64>,
    /// Set when the ground truth was missing and metrics were skipped.
    pub missing_gt: bool,
}

impl ImageMetrics {
    pub fn missing(id: &str) -> Self {
        ImageMetrics {
            id: id.into(),
            rmse: None,
            ssim: None,
            li_ssim: None,
            lpips: None,
            missing_gt: true,
        }
    }

    pub fn compute(
        id: &str,
        pred: &RasterImage,
        gt: &RasterImage,
        fg: &MaskImage,
        lpips: Option<&dyn PerceptualMetric>,
    ) -> Result<Self> {
        let (s, li) = ssim_pair(pred, gt)?;
        Ok(ImageMetrics {
            id: id.into(),
            rmse: Some(rmse(pred, gt, fg)?),
            ssim: Some(s),
            li_ssim: Some(li),
            lpips: lpips.map(|m| m.distance(pred, gt)).transpose()?,
            missing_gt: false,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub rmse: Option<f64>,
    pub ssim: Option<f64>,
    pub li_ssim: Option<f64>,
    pub lpips: Option<f64>,
}

fn mean_of(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

impl Aggregate {
    /// Arithmetic means over the images that have each metric.
    pub fn of(images: &[ImageMetrics]) -> Self {
        Aggregate {
            count: images.iter().filter(|m| !m.missing_gt).count(),
            rmse: mean_of(images.iter().map(|m| m.rmse)),
            ssim: mean_of(images.iter().map(|m| m.ssim)),
            li_ssim: mean_of(images.iter().map(|m| m.li_ssim)),
            lpips: mean_of(images.iter().map(|m| m.lpips)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub policy: String,
    pub config_hash: String,
    pub lpips_version: Option<String>,
    pub images: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
}

impl MetricReport {
    pub fn new(images: Vec<ImageMetrics>, config_hash: String, lpips: Option<&dyn PerceptualMetric>) -> Self {
        MetricReport {
            schema_version: REPORT_SCHEMA_VERSION,
            policy: METRIC_POLICY.into(),
            config_hash,
            lpips_version: lpips.map(|m| alloc::format!("{} {}", m.name(), m.version())),
            aggregate: Aggregate::of(&images),
            images,
        }
    }
}

/// Boxed plug-in, for callers that pick the metric at runtime.
pub type DynPerceptual = Box<dyn PerceptualMetric>;
