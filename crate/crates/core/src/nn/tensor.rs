use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;
use crate::error::{Error, Result};
use crate::image::{RasterImage, ValueRange};

/// Planar `C x H x W` activation tensor for a single sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor buffer size");
        Self { c, h, w, data }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor<T>) -> bool {
        self.c == other.c && self.h == other.h && self.w == other.w
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Converts an interleaved image to planar form, keeping its values.
    pub fn from_image(img: &RasterImage) -> Self {
        let (h, w, c) = img.dims();
        let mut data = vec![T::zero(); c * h * w];
        for (i, v) in img.data().iter().enumerate() {
            let (p, ch) = (i / c, i % c);
            data[ch * h * w + p] = T::lit(*v as f64);
        }
        Self { c, h, w, data }
    }

    /// Converts back to an interleaved image in `range` (values are clamped).
    pub fn to_image(&self, range: ValueRange) -> Result<RasterImage> {
        let n = self.h * self.w;
        let mut data = vec![0.0f32; self.c * n];
        for ch in 0..self.c {
            for p in 0..n {
                let v = self.data[ch * n + p].as_f64() as f32;
                if !v.is_finite() {
                    return Err(Error::contract("tensor holds non-finite values"));
                }
                data[p * self.c + ch] = v;
            }
        }
        RasterImage::new(self.h, self.w, self.c, range, data)
    }

    /// Stacks channels of `a` then `b`.
    pub fn concat(a: &Tensor<T>, b: &Tensor<T>) -> Self {
        assert!(a.h == b.h && a.w == b.w, "concat spatial mismatch");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Self {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Splits channels `[0, first)` and `[first, c)`.
    pub fn split(&self, first: usize) -> (Tensor<T>, Tensor<T>) {
        let n = self.h * self.w;
        (
            Tensor::from_vec(first, self.h, self.w, self.data[..first * n].to_vec()),
            Tensor::from_vec(self.c - first, self.h, self.w, self.data[first * n..].to_vec()),
        )
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let row = &src[(y / 2) * x.w..(y / 2 + 1) * x.w];
            let drow = &mut dst[y * w..(y + 1) * w];
            for (xx, v) in drow.iter_mut().enumerate() {
                *v = row[xx / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2x2 block.
pub fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut out = Tensor::zeros(dy.c, h, w);
    for c in 0..dy.c {
        let src = dy.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..dy.h {
            for x in 0..dy.w {
                dst[(y / 2) * w + x / 2] += src[y * dy.w + x];
            }
        }
    }
    out
}
