use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{MaskImage, RasterImage};

/// Iteration budget of the harmonic fill.
pub const INPAINT_MAX_ITERS: usize = 500;
/// Stop once no hole pixel moves by more than this in one sweep.
pub const INPAINT_TOLERANCE: f64 = 1e-5;

const OVER_RELAXATION: f64 = 1.5;

/// Fills `hole` with the discrete harmonic (Laplace) interpolation of its boundary.
///
/// Uses successive over-relaxation sweeps in raster order over the hole
/// pixels, with 4-neighbour stencils that skip out-of-image neighbours.
/// Pixels outside the hole are copied bit for bit.
pub fn inpaint_diffusion(img: &RasterImage, hole: &MaskImage) -> Result<RasterImage> {
    let (h, w, c) = img.dims();
    if hole.height() != h || hole.width() != w {
        return Err(Error::ShapeMismatch {
            what: "inpainting hole",
            expected: img.dims(),
            got: (hole.height(), hole.width(), 1),
        });
    }
    if !hole.is_binary() {
        return Err(Error::contract("inpainting hole must be binary"));
    }
    let holes: Vec<usize> = (0..h * w).filter(|i| hole.data()[*i] != 0.0).collect();
    if holes.is_empty() {
        return Ok(img.clone());
    }
    if holes.len() == h * w {
        return Err(Error::NoBoundary);
    }

    let src = img.data();
    let mut out: Vec<f32> = src.to_vec();
    let in_hole = |i: usize| hole.data()[i] != 0.0;
    let neighbours = |i: usize| {
        let (y, x) = (i / w, i % w);
        let mut n = [usize::MAX; 4];
        if x > 0 {
            n[0] = i - 1;
        }
        if x + 1 < w {
            n[1] = i + 1;
        }
        if y > 0 {
            n[2] = i - w;
        }
        if y + 1 < h {
            n[3] = i + w;
        }
        n
    };

    for ch in 0..c {
        // seed the hole with the mean of the pixels bordering it
        let (mut sum, mut count) = (0.0f64, 0usize);
        for &i in &holes {
            for j in neighbours(i) {
                if j != usize::MAX && !in_hole(j) {
                    sum += src[j * c + ch] as f64;
                    count += 1;
                }
            }
        }
        let seed = if count > 0 { sum / count as f64 } else { 0.0 };
        let mut field: Vec<f64> = src.iter().skip(ch).step_by(c).map(|v| *v as f64).collect();
        for &i in &holes {
            field[i] = seed;
        }
        for _ in 0..INPAINT_MAX_ITERS {
            let mut max_step = 0.0f64;
            for &i in &holes {
                let (mut acc, mut n) = (0.0, 0u32);
                for j in neighbours(i) {
                    if j != usize::MAX {
                        acc += field[j];
                        n += 1;
                    }
                }
                let target = acc / n as f64;
                let step = OVER_RELAXATION * (target - field[i]);
                field[i] += step;
                max_step = max_step.max(step.abs());
            }
            if max_step < INPAINT_TOLERANCE {
                break;
            }
        }
        for &i in &holes {
            out[i * c + ch] = field[i] as f32;
        }
    }
    RasterImage::new(h, w, c, img.range(), out)
}
