//! sRGB <-> CIE Lab (D65) conversions.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{RasterImage, ValueRange};

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

// Reference white is the image of sRGB (1,1,1), so white lands on L = 100, a = b = 0.
const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

const DELTA: f64 = 6.0 / 29.0;

#[inline]
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        libm::pow((v + 0.055) / 1.055, 2.4)
    }
}

#[inline]
pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * libm::pow(v, 1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        libm::cbrt(t)
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

#[inline]
fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// Lab lightness `L` in `[0, 100]` of an sRGB triple.
pub fn lightness(rgb: [f64; 3]) -> f64 {
    let lin = rgb.map(srgb_to_linear);
    let y = RGB_TO_XYZ[1][0] * lin[0] + RGB_TO_XYZ[1][1] * lin[1] + RGB_TO_XYZ[1][2] * lin[2];
    116.0 * lab_f(y / WHITE[1]) - 16.0
}

pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut xyz = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        xyz[i] = (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]) / WHITE[i];
    }
    let (fx, fy, fz) = (lab_f(xyz[0]), lab_f(xyz[1]), lab_f(xyz[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Inverse of [`srgb_to_lab`]; the result is not clamped.
pub fn lab_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        lab_f_inv(fx) * WHITE[0],
        lab_f_inv(fy) * WHITE[1],
        lab_f_inv(fz) * WHITE[2],
    ];
    let inv = invert3(RGB_TO_XYZ);
    let mut rgb = [0.0; 3];
    for (i, row) in inv.iter().enumerate() {
        rgb[i] = linear_to_srgb(row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]);
    }
    rgb
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            out[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    out
}

fn pixel(img: &RasterImage, i: usize) -> [f64; 3] {
    let d = img.data();
    [d[3 * i] as f64, d[3 * i + 1] as f64, d[3 * i + 2] as f64]
}

fn require_rgb(img: &RasterImage) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::contract("Lab conversion needs a 3-channel image"));
    }
    Ok(())
}

/// Lab lightness of a unit-range RGB image, rescaled to `[0, 1]` (`L / 100`).
pub fn luminance_lab(img: &RasterImage) -> Result<RasterImage> {
    require_rgb(img)?;
    let n = img.height() * img.width();
    let data = (0..n).map(|i| (lightness(pixel(img, i)) / 100.0) as f32).collect();
    RasterImage::new(img.height(), img.width(), 1, ValueRange::Unit, data)
}

/// Converts a unit-range RGB image to planar Lab (`[L, a, b]` planes, `L` in `[0, 100]`).
pub fn to_lab_planes(img: &RasterImage) -> Result<[Vec<f64>; 3]> {
    require_rgb(img)?;
    let n = img.height() * img.width();
    let mut planes = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        let lab = srgb_to_lab(pixel(img, i));
        for c in 0..3 {
            planes[c].push(lab[c]);
        }
    }
    Ok(planes)
}

/// Converts planar Lab back to a unit-range RGB image, clamping out-of-gamut values.
pub fn from_lab_planes(planes: &[Vec<f64>; 3], height: usize, width: usize) -> Result<RasterImage> {
    let n = height * width;
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        let rgb = lab_to_srgb([planes[0][i], planes[1][i], planes[2][i]]);
        data.extend(rgb.iter().map(|v| *v as f32));
    }
    RasterImage::new(height, width, 3, ValueRange::Unit, data)
}
