//! Resampling, flips and crops.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{MaskImage, RasterImage};

/// Rectangular crop window in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Window {
    pub fn square(top: usize, left: usize, size: usize) -> Self {
        Self {
            top,
            left,
            height: size,
            width: size,
        }
    }
}

/// Taps of a triangle (bilinear) filter for one output axis.
///
/// When shrinking, the triangle is widened by the scale factor so every
/// source pixel contributes (area-aware bilinear). At scale 1 the taps
/// collapse to the identity.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = src as f64 / dst as f64;
    let support = scale.max(1.0);
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = libm::floor(center - support).max(0.0) as usize;
            let hi = (libm::ceil(center + support) as usize).min(src - 1);
            let mut weights: Vec<f64> = (lo..=hi)
                .map(|j| (1.0 - libm::fabs(j as f64 - center) / support).max(0.0))
                .collect();
            let s: f64 = weights.iter().sum();
            if s > 0.0 {
                weights.iter_mut().for_each(|v| *v /= s);
            } else {
                // centre lies outside the source: nearest edge sample
                weights.iter_mut().for_each(|v| *v = 0.0);
                let k = if center < 0.0 { 0 } else { weights.len() - 1 };
                weights[k] = 1.0;
            }
            (lo, weights)
        })
        .collect()
}

/// Resamples an interleaved `h x w x c` buffer.
pub(crate) fn resample(data: &[f32], h: usize, w: usize, c: usize, nh: usize, nw: usize) -> Vec<f32> {
    let xt = axis_taps(w, nw);
    let yt = axis_taps(h, nh);
    let mut tmp = vec![0.0f64; h * nw * c];
    for y in 0..h {
        for (x, (lo, ws)) in xt.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in ws.iter().enumerate() {
                    acc += wt * data[(y * w + lo + k) * c + ch] as f64;
                }
                tmp[(y * nw + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; nh * nw * c];
    for (y, (lo, ws)) in yt.iter().enumerate() {
        for x in 0..nw {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in ws.iter().enumerate() {
                    acc += wt * tmp[((lo + k) * nw + x) * c + ch];
                }
                out[(y * nw + x) * c + ch] = acc as f32;
            }
        }
    }
    out
}

pub fn resize(img: &RasterImage, new_h: usize, new_w: usize) -> Result<RasterImage> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::contract("resize target must be at least 1x1"));
    }
    let (h, w, c) = img.dims();
    RasterImage::new(new_h, new_w, c, img.range(), resample(img.data(), h, w, c, new_h, new_w))
}

pub fn resize_mask(mask: &MaskImage, new_h: usize, new_w: usize) -> Result<MaskImage> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::contract("resize target must be at least 1x1"));
    }
    MaskImage::new(new_h, new_w, resample(mask.data(), mask.height(), mask.width(), 1, new_h, new_w))
}

fn flip_buffer(data: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(data.len());
    for y in 0..h {
        for x in (0..w).rev() {
            out.extend_from_slice(&data[(y * w + x) * c..(y * w + x + 1) * c]);
        }
    }
    out
}

/// Mirrors left and right (a flip about the vertical axis).
pub fn flip_horizontal(img: &RasterImage) -> RasterImage {
    let (h, w, c) = img.dims();
    RasterImage::new(h, w, c, img.range(), flip_buffer(img.data(), h, w, c)).expect("permutation of valid pixels")
}

pub fn flip_mask(mask: &MaskImage) -> MaskImage {
    let (h, w) = (mask.height(), mask.width());
    MaskImage::new(h, w, flip_buffer(mask.data(), h, w, 1)).expect("permutation of valid pixels")
}

fn check_window(h: usize, w: usize, win: &Window) -> Result<()> {
    if win.height == 0 || win.width == 0 || win.top + win.height > h || win.left + win.width > w {
        return Err(Error::contract(alloc::format!(
            "crop window {win:?} does not fit a {h}x{w} image"
        )));
    }
    Ok(())
}

fn crop_buffer(data: &[f32], w: usize, c: usize, win: &Window) -> Vec<f32> {
    let mut out = Vec::with_capacity(win.height * win.width * c);
    for y in win.top..win.top + win.height {
        let start = (y * w + win.left) * c;
        out.extend_from_slice(&data[start..start + win.width * c]);
    }
    out
}

pub fn crop(img: &RasterImage, win: Window) -> Result<RasterImage> {
    let (h, w, c) = img.dims();
    check_window(h, w, &win)?;
    RasterImage::new(win.height, win.width, c, img.range(), crop_buffer(img.data(), w, c, &win))
}

pub fn crop_mask(mask: &MaskImage, win: Window) -> Result<MaskImage> {
    check_window(mask.height(), mask.width(), &win)?;
    MaskImage::new(win.height, win.width, crop_buffer(mask.data(), mask.width(), 1, &win))
}
