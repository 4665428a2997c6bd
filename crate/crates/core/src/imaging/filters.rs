//! Spatial filters: gradient magnitude, guided filter, median and Gaussian.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{RasterImage, ValueRange};

/// Regularizer of the guided filter's local linear model, for `[0,1]` images.
pub const GUIDED_FILTER_EPS: f32 = 1e-4;

/// Per-pixel `|dx| + |dy|` from forward differences, summed over channels.
///
/// The last row and column have no forward neighbour and contribute zero.
pub fn grad_sum(img: &RasterImage) -> RasterImage {
    let (h, w, c) = img.dims();
    let d = img.data();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * c;
            let mut acc = 0.0;
            for ch in 0..c {
                let v = d[base + ch];
                if x + 1 < w {
                    acc += (d[base + c + ch] - v).abs();
                }
                if y + 1 < h {
                    acc += (d[base + w * c + ch] - v).abs();
                }
            }
            out[y * w + x] = acc;
        }
    }
    RasterImage::new(h, w, 1, ValueRange::Free, out).expect("finite gradients")
}

/// Window mean over a `(2r+1)^2` box clipped at the borders.
pub(crate) fn box_mean(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let stride = w + 1;
    let mut integral = vec![0.0f64; (h + 1) * stride];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += plane[y * w + x];
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let s = integral[y1 * stride + x1] - integral[y0 * stride + x1] - integral[y1 * stride + x0]
                + integral[y0 * stride + x0];
            out[y * w + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

fn guided_plane(p: &[f64], guide: &[f64], h: usize, w: usize, r: usize, eps: f64) -> Vec<f64> {
    let mean_i = box_mean(guide, h, w, r);
    let mean_p = box_mean(p, h, w, r);
    let ii: Vec<f64> = guide.iter().map(|v| v * v).collect();
    let ip: Vec<f64> = guide.iter().zip(p).map(|(a, b)| a * b).collect();
    let corr_ii = box_mean(&ii, h, w, r);
    let corr_ip = box_mean(&ip, h, w, r);
    let mut a = vec![0.0; h * w];
    let mut b = vec![0.0; h * w];
    for k in 0..h * w {
        let var = (corr_ii[k] - mean_i[k] * mean_i[k]).max(0.0);
        let cov = corr_ip[k] - mean_i[k] * mean_p[k];
        a[k] = cov / (var + eps);
        b[k] = mean_p[k] - a[k] * mean_i[k];
    }
    let mean_a = box_mean(&a, h, w, r);
    let mean_b = box_mean(&b, h, w, r);
    (0..h * w).map(|k| mean_a[k] * guide[k] + mean_b[k]).collect()
}

/// Edge-preserving smoothing of `input`, steered by the edges of `edge_ref`.
///
/// Each channel of `input` is filtered with the matching channel of
/// `edge_ref` as guide (a single-channel reference guides every channel).
/// Windows are `(2 * radius + 1)^2`, clipped at the image border.
pub fn guided_filter(
    input: &RasterImage,
    edge_ref: &RasterImage,
    radius: usize,
    regularizer: f32,
) -> Result<RasterImage> {
    input.ensure_same_size(edge_ref, "guided filter reference")?;
    if radius == 0 {
        return Err(Error::contract("guided filter radius must be at least 1"));
    }
    if !(regularizer > 0.0) {
        return Err(Error::contract("guided filter regularizer must be positive"));
    }
    if edge_ref.channels() != 1 && edge_ref.channels() != input.channels() {
        return Err(Error::contract(format!(
            "edge reference has {} channels, input has {}",
            edge_ref.channels(),
            input.channels()
        )));
    }
    let (h, w, _) = input.dims();
    let inputs = input.planes();
    let guides = edge_ref.planes();
    let planes: Vec<Vec<f32>> = inputs
        .iter()
        .enumerate()
        .map(|(c, p)| {
            let g = &guides[if guides.len() == 1 { 0 } else { c }];
            let p64: Vec<f64> = p.iter().map(|v| *v as f64).collect();
            let g64: Vec<f64> = g.iter().map(|v| *v as f64).collect();
            guided_plane(&p64, &g64, h, w, radius, regularizer as f64)
                .into_iter()
                .map(|v| v as f32)
                .collect()
        })
        .collect();
    RasterImage::from_planes(&planes, h, w, input.range())
}

/// Per-channel `k x k` median with edge-replicated borders.
pub fn median_filter(img: &RasterImage, k: usize) -> Result<RasterImage> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::contract(format!("median window must be odd, got {k}")));
    }
    let (h, w, c) = img.dims();
    let r = (k / 2) as isize;
    let d = img.data();
    let mut out = vec![0.0f32; h * w * c];
    let mut window = Vec::with_capacity(k * k);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                window.clear();
                for dy in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -r..=r {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window.push(d[(yy * w + xx) * c + ch]);
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
                out[(y * w + x) * c + ch] = *m;
            }
        }
    }
    RasterImage::new(h, w, c, img.range(), out)
}

/// Normalized Gaussian taps truncated at `3 sigma` (odd length `2 ceil(3 sigma) + 1`).
pub fn gaussian_kernel(sigma: f32) -> Vec<f64> {
    let sigma = sigma as f64;
    let r = libm::ceil(3.0 * sigma) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge-replicated borders.
pub fn gaussian_blur(img: &RasterImage, sigma: f32) -> Result<RasterImage> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::contract("gaussian sigma must be positive"));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (h, w, c) = img.dims();
    let d = img.data();
    let mut tmp = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in kernel.iter().enumerate() {
                    let xx = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * d[(y * w + xx) * c + ch] as f64;
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in kernel.iter().enumerate() {
                    let yy = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc as f32;
            }
        }
    }
    RasterImage::new(h, w, c, img.range(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::geometry::flip_horizontal;
    use crate::testutil::{random_image, Lcg};
    use proptest::prelude::*;

    #[test]
    fn grad_of_constant_is_zero() {
        let img = RasterImage::filled(5, 4, 3, ValueRange::Unit, 0.3).unwrap();
        assert!(grad_sum(&img).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_of_vertical_step() {
        // columns 0..2 at 0.2, columns 2..5 at 0.7: only column 1 sees the jump
        let img = RasterImage::from_fn(4, 5, 1, ValueRange::Unit, |_, x, _| if x < 2 { 0.2 } else { 0.7 }).unwrap();
        let g = grad_sum(&img);
        for y in 0..4 {
            for x in 0..5 {
                let want = if x == 1 { 0.5 } else { 0.0 };
                assert!((g.get(y, x, 0) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn grad_matches_double_loop() {
        let mut rng = Lcg(7);
        let img = random_image(&mut rng, 4, 4, 3);
        let g = grad_sum(&img);
        for y in 0..4 {
            for x in 0..4 {
                let mut want = 0.0f32;
                for c in 0..3 {
                    let v = img.get(y, x, c);
                    let right = if x < 3 { img.get(y, x + 1, c) } else { v };
                    let down = if y < 3 { img.get(y + 1, x, c) } else { v };
                    want += (right - v).abs() + (down - v).abs();
                }
                assert!((g.get(y, x, 0) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn guided_filter_preserves_constants() {
        let mut rng = Lcg(3);
        let reference = random_image(&mut rng, 9, 7, 3);
        let flat = RasterImage::filled(9, 7, 3, ValueRange::Unit, 0.42).unwrap();
        for r in [1, 2, 15] {
            let out = guided_filter(&flat, &reference, r, GUIDED_FILTER_EPS).unwrap();
            assert!(out.data().iter().all(|v| (*v - 0.42).abs() < 1e-6));
        }
    }

    #[test]
    fn guided_filter_rejects_mismatch() {
        let a = RasterImage::filled(4, 4, 3, ValueRange::Unit, 0.1).unwrap();
        let b = RasterImage::filled(4, 5, 3, ValueRange::Unit, 0.1).unwrap();
        assert!(guided_filter(&a, &b, 1, 1e-4).is_err());
        assert!(guided_filter(&a, &a, 0, 1e-4).is_err());
    }

    #[test]
    fn median_identity_and_salt() {
        let mut rng = Lcg(11);
        let img = random_image(&mut rng, 5, 6, 3);
        assert_eq!(median_filter(&img, 1).unwrap(), img);
        let salt = RasterImage::from_fn(5, 5, 1, ValueRange::Unit, |y, x, _| if (y, x) == (2, 2) { 1.0 } else { 0.3 }).unwrap();
        let out = median_filter(&salt, 3).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.3));
        assert!(median_filter(&img, 4).is_err());
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = Lcg(5);
        let img = random_image(&mut rng, 5, 5, 1);
        let out = median_filter(&img, 3).unwrap();
        for y in 0..5i32 {
            for x in 0..5i32 {
                let mut v = alloc::vec::Vec::new();
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let yy = (y + dy).clamp(0, 4) as usize;
                        let xx = (x + dx).clamp(0, 4) as usize;
                        v.push(img.get(yy, xx, 0));
                    }
                }
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(out.get(y as usize, x as usize, 0), v[4]);
            }
        }
    }

    #[test]
    fn gaussian_kernel_size_and_mass() {
        assert_eq!(gaussian_kernel(3.0).len(), 19);
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        let s: f64 = gaussian_kernel(2.5).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_keeps_constants_and_mass() {
        let flat = RasterImage::filled(6, 6, 3, ValueRange::Unit, 0.6).unwrap();
        let out = gaussian_blur(&flat, 1.3).unwrap();
        assert!(out.data().iter().all(|v| (*v - 0.6).abs() < 1e-6));
        let delta = RasterImage::from_fn(21, 21, 1, ValueRange::Unit, |y, x, _| if (y, x) == (10, 10) { 1.0 } else { 0.0 }).unwrap();
        let out = gaussian_blur(&delta, 2.0).unwrap();
        let mass: f64 = out.data().iter().map(|v| *v as f64).sum();
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_matches_dense_convolution_on_delta() {
        let delta = RasterImage::from_fn(7, 7, 1, ValueRange::Unit, |y, x, _| if (y, x) == (3, 3) { 1.0 } else { 0.0 }).unwrap();
        let out = gaussian_blur(&delta, 1.0).unwrap();
        // dense 2-D oracle: taps exp(-(dx^2+dy^2)/2) normalised over the 7x7 support
        let mut norm = 0.0f64;
        for dy in -3..=3i32 {
            for dx in -3..=3i32 {
                norm += libm::exp(-((dx * dx + dy * dy) as f64) / 2.0);
            }
        }
        for y in 0..7i32 {
            for x in 0..7i32 {
                let (dy, dx) = (y - 3, x - 3);
                let want = libm::exp(-((dx * dx + dy * dy) as f64) / 2.0) / norm;
                assert!((out.get(y as usize, x as usize, 0) as f64 - want).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn filters_commute_with_flip(seed in 0u64..1000, k in prop::sample::select(alloc::vec![1usize, 3, 5])) {
            let mut rng = Lcg(seed);
            let img = random_image(&mut rng, 7, 9, 3);
            let a = median_filter(&flip_horizontal(&img), k).unwrap();
            let b = flip_horizontal(&median_filter(&img, k).unwrap());
            prop_assert_eq!(a, b);
            let a = gaussian_blur(&flip_horizontal(&img), 1.5).unwrap();
            let b = flip_horizontal(&gaussian_blur(&img, 1.5).unwrap());
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn filters_stay_in_unit_range(seed in 0u64..1000, r in 1usize..4) {
            let mut rng = Lcg(seed);
            let img = random_image(&mut rng, 8, 8, 3);
            let refimg = random_image(&mut rng, 8, 8, 3);
            for out in [
                guided_filter(&img, &refimg, r, GUIDED_FILTER_EPS).unwrap(),
                median_filter(&img, 2 * r + 1).unwrap(),
                gaussian_blur(&img, r as f32).unwrap(),
            ] {
                prop_assert!(out.data().iter().all(|v| v.is_finite() && *v >= -1e-6 && *v <= 1.0 + 1e-6));
            }
        }

        #[test]
        fn grad_zero_iff_constant(seed in 0u64..1000) {
            let mut rng = Lcg(seed);
            let img = random_image(&mut rng, 5, 5, 1);
            let constant = img.data().iter().all(|v| *v == img.data()[0]);
            let zero = grad_sum(&img).data().iter().all(|v| *v == 0.0);
            prop_assert_eq!(constant, zero);
        }
    }
}
