//! Image containers shared by every stage of the pipeline.
//!
//! Pixels are stored row-major with interleaved channels (`HWC`). Values are
//! clamped into the declared [`ValueRange`] whenever an image is constructed,
//! and non-finite input is rejected.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared value range of a [`RasterImage`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    /// `[0, 1]`, the photometric range of captured and rendered images.
    Unit,
    /// `[-1, 1]`, the network input/output range.
    Signed,
    /// `[-1, 1]`, a difference of two unit images (shading offsets).
    Offset,
    /// Unbounded intermediate (gradient magnitudes, mask pre-activations).
    Free,
}

impl ValueRange {
    pub fn bounds(self) -> (f32, f32) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Signed | ValueRange::Offset => (-1.0, 1.0),
            ValueRange::Free => (f32::NEG_INFINITY, f32::INFINITY),
        }
    }

    pub fn clamp(self, v: f32) -> f32 {
        let (lo, hi) = self.bounds();
        v.clamp(lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    range: ValueRange,
    data: Vec<f32>,
}

impl RasterImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        range: ValueRange,
        mut data: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("image must be at least 1x1"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::contract(format!(
                "images carry 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::contract(format!(
                "pixel buffer holds {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::contract("image values must be finite"));
            }
            *v = range.clamp(*v);
        }
        Ok(Self {
            height,
            width,
            channels,
            range,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, range: ValueRange, value: f32) -> Result<Self> {
        Self::new(height, width, channels, range, vec![value; height * width * channels])
    }

    /// Builds an image from a per-sample closure `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        range: ValueRange,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, range, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn range(&self) -> ValueRange {
        self.range
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_size(&self, other: &RasterImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn ensure_same_size(&self, other: &RasterImage, what: &'static str) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                what,
                expected: self.dims(),
                got: other.dims(),
            })
        }
    }

    /// Extracts one channel as a single-channel image of the same range.
    pub fn channel(&self, c: usize) -> RasterImage {
        assert!(c < self.channels);
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        RasterImage {
            height: self.height,
            width: self.width,
            channels: 1,
            range: self.range,
            data,
        }
    }

    /// Interleaves single-channel planes into one image.
    pub fn from_planes(planes: &[Vec<f32>], height: usize, width: usize, range: ValueRange) -> Result<Self> {
        let channels = planes.len();
        let mut data = vec![0.0; height * width * channels];
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != height * width {
                return Err(Error::contract("plane size does not match image size"));
            }
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Self::new(height, width, channels, range, data)
    }

    /// Splits into per-channel planes.
    pub fn planes(&self) -> Vec<Vec<f32>> {
        (0..self.channels)
            .map(|c| self.data.iter().skip(c).step_by(self.channels).copied().collect())
            .collect()
    }

    /// Applies `f` elementwise and reinterprets the result in `range`.
    pub fn map(&self, range: ValueRange, mut f: impl FnMut(f32) -> f32) -> Result<RasterImage> {
        let data = self.data.iter().map(|v| f(*v)).collect();
        RasterImage::new(self.height, self.width, self.channels, range, data)
    }

    /// Elementwise combination of two equally shaped images.
    pub fn zip_map(
        &self,
        other: &RasterImage,
        range: ValueRange,
        mut f: impl FnMut(f32, f32) -> f32,
    ) -> Result<RasterImage> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                what: "elementwise operands",
                expected: self.dims(),
                got: other.dims(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        RasterImage::new(self.height, self.width, self.channels, range, data)
    }

    /// Sets every pixel outside `mask` (mask value 0) to `fill`, and scales
    /// partial mask values linearly towards the fill.
    pub fn masked(&self, mask: &MaskImage, fill: f32) -> Result<RasterImage> {
        if mask.height() != self.height || mask.width() != self.width {
            return Err(Error::ShapeMismatch {
                what: "mask",
                expected: self.dims(),
                got: (mask.height(), mask.width(), 1),
            });
        }
        let c = self.channels;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let m = mask.data()[i / c];
                m * v + (1.0 - m) * fill
            })
            .collect();
        RasterImage::new(self.height, self.width, c, self.range, data)
    }

    /// Reinterprets the values in another range (values are re-clamped).
    pub fn with_range(self, range: ValueRange) -> RasterImage {
        let mut out = self;
        out.range = range;
        for v in out.data.iter_mut() {
            *v = range.clamp(*v);
        }
        out
    }

    /// Unit `[0,1]` to signed `[-1,1]`.
    pub fn to_signed(&self) -> RasterImage {
        let data = self.data.iter().map(|v| v * 2.0 - 1.0).collect();
        RasterImage::new(self.height, self.width, self.channels, ValueRange::Signed, data)
            .expect("affine map of valid image")
    }

    /// Signed `[-1,1]` to unit `[0,1]`.
    pub fn to_unit(&self) -> RasterImage {
        let data = self.data.iter().map(|v| (v + 1.0) * 0.5).collect();
        RasterImage::new(self.height, self.width, self.channels, ValueRange::Unit, data)
            .expect("affine map of valid image")
    }
}

/// Single-channel weight or region mask with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl MaskImage {
    pub fn new(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("mask must be at least 1x1"));
        }
        if data.len() != height * width {
            return Err(Error::contract("mask buffer does not match its size"));
        }
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::contract("mask values must be finite"));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| *v as f64).sum()
    }

    /// Thresholds into a binary mask (`v >= threshold` becomes 1).
    pub fn binarize(&self, threshold: f32) -> MaskImage {
        MaskImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| if *v >= threshold { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn to_raster(&self) -> RasterImage {
        RasterImage::new(self.height, self.width, 1, ValueRange::Unit, self.data.clone())
            .expect("mask values are in range")
    }

    pub fn from_raster(img: &RasterImage) -> Result<MaskImage> {
        if img.channels() != 1 {
            return Err(Error::contract("mask conversion needs a single-channel image"));
        }
        MaskImage::new(img.height(), img.width(), img.data().to_vec())
    }

    pub fn zip_map(&self, other: &MaskImage, mut f: impl FnMut(f32, f32) -> f32) -> Result<MaskImage> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch {
                what: "mask operands",
                expected: (self.height, self.width, 1),
                got: (other.height, other.width, 1),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        MaskImage::new(self.height, self.width, data)
    }
}
