//! Soft-shadow variants and the high-frequency shading mask.

use super::capture::{regions, Parsing};
use super::config::HfMaskParams;
use crate::error::{Error, Result};
use crate::image::{MaskImage, RasterImage, ValueRange};
use crate::imaging::{gaussian_blur, grad_sum, guided_filter, median_filter};

/// Softens shadow borders by guided filtering `src` with `dlt` as edge
/// reference: radius `epsilon` on the nose and mouth, `kappa` elsewhere.
/// The result is zero outside the foreground.
pub fn synth_soft_shadow(
    src: &RasterImage,
    dlt: &RasterImage,
    parsing: &Parsing,
    foreground: &MaskImage,
    epsilon: usize,
    kappa: usize,
    guided_eps: f32,
) -> Result<RasterImage> {
    if epsilon > kappa {
        return Err(Error::contract("epsilon radius must not exceed kappa"));
    }
    let [nose, mouth, other] = regions(foreground, parsing)?;
    let fine = guided_filter(src, dlt, epsilon, guided_eps)?;
    let coarse = if kappa == epsilon {
        fine.clone()
    } else {
        guided_filter(src, dlt, kappa, guided_eps)?
    };
    let c = src.channels();
    let mut i = 0usize;
    fine.zip_map(&coarse, ValueRange::Unit, |f, k| {
        let p = i / c;
        i += 1;
        (nose.data()[p] + mouth.data()[p]) * f + other.data()[p] * k
    })
}

/// The three stages of the mask, kept for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct HfMaskStages {
    /// `gain * max(grad(src) - grad(smoothed src), 0)`.
    pub a: RasterImage,
    /// Median-filtered `a`.
    pub b: RasterImage,
    pub w: MaskImage,
}

/// Weight mask marking sharp shading (hard shadow borders, highlights)
/// that the guided filter removes from `src`.
pub fn build_hf_mask(
    src: &RasterImage,
    dlt: &RasterImage,
    foreground: &MaskImage,
    params: &HfMaskParams,
    guided_eps: f32,
) -> Result<MaskImage> {
    Ok(hf_mask_stages(src, dlt, foreground, params, guided_eps)?.w)
}

pub fn hf_mask_stages(
    src: &RasterImage,
    dlt: &RasterImage,
    foreground: &MaskImage,
    params: &HfMaskParams,
    guided_eps: f32,
) -> Result<HfMaskStages> {
    let smooth = guided_filter(src, dlt, params.radius, guided_eps)?;
    let gain = params.gain;
    let a = grad_sum(src).zip_map(&grad_sum(&smooth), ValueRange::Free, |s, g| gain * (s - g).max(0.0))?;
    let b = median_filter(&a, params.median)?;
    let blurred = gaussian_blur(&b, params.sigma)?;
    let w = b.zip_map(&blurred, ValueRange::Unit, |x, y| (x + y).min(1.0))?;
    let w = MaskImage::from_raster(&w)?.zip_map(foreground, |v, f| v * f)?;
    Ok(HfMaskStages { a, b, w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::GUIDED_FILTER_EPS;
    use crate::testutil::{random_image, Lcg};
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn full_fg(h: usize, w: usize) -> MaskImage {
        MaskImage::from_fn(h, w, |_, _| 1.0).unwrap()
    }

    fn no_parsing(h: usize, w: usize) -> Parsing {
        Parsing {
            nose: MaskImage::zeros(h, w).unwrap(),
            mouth: MaskImage::zeros(h, w).unwrap(),
        }
    }

    /// Left half lit, right half in shadow, over a smooth albedo ramp.
    fn step_shadow(h: usize, w: usize, edge: usize) -> (RasterImage, RasterImage) {
        let albedo = |y: usize, x: usize| 0.4 + 0.2 * (x + y) as f32 / (h + w) as f32;
        let dlt = RasterImage::from_fn(h, w, 3, ValueRange::Unit, |y, x, _| albedo(y, x)).unwrap();
        let src = RasterImage::from_fn(h, w, 3, ValueRange::Unit, |y, x, _| {
            albedo(y, x) * if x < edge { 1.0 } else { 0.3 }
        })
        .unwrap();
        (src, dlt)
    }

    #[test]
    fn equal_src_and_dlt_is_near_identity() {
        let mut rng = Lcg(8);
        let img = random_image(&mut rng, 24, 24, 3);
        let out = synth_soft_shadow(&img, &img, &no_parsing(24, 24), &full_fg(24, 24), 7, 15, GUIDED_FILTER_EPS).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 0.02, "{a} vs {b}");
        }
    }

    #[test]
    fn shadow_border_is_softened() {
        let (src, dlt) = step_shadow(40, 40, 20);
        let soft = synth_soft_shadow(&src, &dlt, &no_parsing(40, 40), &full_fg(40, 40), 7, 15, GUIDED_FILTER_EPS).unwrap();
        let border = |img: &RasterImage| {
            let g = grad_sum(img);
            (0..40).map(|y| g.get(y, 19, 0)).fold(0.0f32, f32::max)
        };
        let (before, after) = (border(&src), border(&soft));
        assert!(before >= 5.0 * after, "{before} vs {after}");
    }

    #[test]
    fn regions_use_their_radius() {
        let (src, dlt) = step_shadow(32, 32, 16);
        let fg = full_fg(32, 32);
        let nose = MaskImage::from_fn(32, 32, |y, x| if (8..16).contains(&y) && (12..20).contains(&x) { 1.0 } else { 0.0 }).unwrap();
        let parsing = Parsing {
            nose,
            mouth: MaskImage::zeros(32, 32).unwrap(),
        };
        let out = synth_soft_shadow(&src, &dlt, &parsing, &fg, 2, 12, GUIDED_FILTER_EPS).unwrap();
        let fine = guided_filter(&src, &dlt, 2, GUIDED_FILTER_EPS).unwrap();
        let coarse = guided_filter(&src, &dlt, 12, GUIDED_FILTER_EPS).unwrap();
        assert_eq!(out.get(10, 14, 1), fine.get(10, 14, 1));
        assert_eq!(out.get(25, 25, 2), coarse.get(25, 25, 2));
    }

    #[test]
    fn overlapping_parsing_rejected() {
        let (src, dlt) = step_shadow(8, 8, 4);
        let m = MaskImage::from_fn(8, 8, |y, _| if y < 2 { 1.0 } else { 0.0 }).unwrap();
        let parsing = Parsing { nose: m.clone(), mouth: m };
        assert!(synth_soft_shadow(&src, &dlt, &parsing, &full_fg(8, 8), 2, 3, GUIDED_FILTER_EPS).is_err());
    }

    #[test]
    fn smooth_source_gives_empty_mask() {
        let flat = RasterImage::filled(20, 20, 3, ValueRange::Unit, 0.5).unwrap();
        let w = build_hf_mask(&flat, &flat, &full_fg(20, 20), &HfMaskParams::default(), GUIDED_FILTER_EPS).unwrap();
        assert!(w.data().iter().all(|v| *v == 0.0));
    }

    /// Direct loops for the three mask stages on a single plane.
    fn brute_force_mask(src: &RasterImage, smooth: &RasterImage, p: &HfMaskParams) -> Vec<f32> {
        let (h, w, c) = src.dims();
        let grad = |img: &RasterImage, y: usize, x: usize| -> f64 {
            let mut s = 0.0;
            for ch in 0..c {
                let v = img.get(y, x, ch) as f64;
                if x + 1 < w {
                    s += (img.get(y, x + 1, ch) as f64 - v).abs();
                }
                if y + 1 < h {
                    s += (img.get(y + 1, x, ch) as f64 - v).abs();
                }
            }
            s
        };
        let mut a = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                a[y * w + x] = p.gain as f64 * (grad(src, y, x) - grad(smooth, y, x)).max(0.0);
            }
        }
        let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let r = (p.median / 2) as isize;
        let mut b = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut win = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        win.push(a[clampi(y as isize + dy, h) * w + clampi(x as isize + dx, w)]);
                    }
                }
                win.sort_by(|p, q| p.partial_cmp(q).unwrap());
                b[y * w + x] = win[win.len() / 2];
            }
        }
        let gr = libm::ceil(3.0 * p.sigma as f64) as isize;
        let k: Vec<f64> = (-gr..=gr).map(|i| libm::exp(-((i * i) as f64) / (2.0 * (p.sigma as f64).powi(2)))).collect();
        let ks: f64 = k.iter().sum();
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut g = 0.0;
                for (iy, ky) in k.iter().enumerate() {
                    for (ix, kx) in k.iter().enumerate() {
                        let yy = clampi(y as isize + iy as isize - gr, h);
                        let xx = clampi(x as isize + ix as isize - gr, w);
                        g += ky * kx * b[yy * w + xx];
                    }
                }
                out[y * w + x] = (b[y * w + x] + g / (ks * ks)).min(1.0) as f32;
            }
        }
        out
    }

    /// Uniform albedo with a one-pixel penumbra at column 7.
    fn penumbra_edge(n: usize) -> (RasterImage, RasterImage) {
        let dlt = RasterImage::filled(n, n, 3, ValueRange::Unit, 0.6).unwrap();
        let shade = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.65, 0.3];
        let src = RasterImage::from_fn(n, n, 3, ValueRange::Unit, |_, x, _| 0.6 * shade[x.min(8)]).unwrap();
        (src, dlt)
    }

    #[test]
    fn hard_edge_mask_matches_staged_oracle() {
        let (src, dlt) = penumbra_edge(16);
        let p = HfMaskParams {
            radius: 4,
            gain: 10.0,
            median: 3,
            sigma: 1.0,
        };
        let w = build_hf_mask(&src, &dlt, &full_fg(16, 16), &p, GUIDED_FILTER_EPS).unwrap();
        let smooth = guided_filter(&src, &dlt, 4, GUIDED_FILTER_EPS).unwrap();
        let want = brute_force_mask(&src, &smooth, &p);
        for (a, b) in w.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        // The Gaussian tail beyond the band stays below 0.05.
        for y in 0..16 {
            let row: Vec<f32> = (0..16).map(|x| w.get(y, x)).collect();
            for (x, v) in row.iter().enumerate() {
                if *v > 0.05 {
                    assert!((x as isize - 7).abs() <= 3, "band leaks to x={x}: {row:?}");
                }
            }
            assert!(row[6] > 0.5 && row[7] > 0.5, "{row:?}");
        }
    }

    #[test]
    fn mask_zero_off_foreground() {
        let (src, dlt) = step_shadow(16, 16, 8);
        let fg = MaskImage::from_fn(16, 16, |y, _| if y < 8 { 1.0 } else { 0.0 }).unwrap();
        let w = build_hf_mask(&src, &dlt, &fg, &HfMaskParams { radius: 4, gain: 10.0, median: 3, sigma: 1.0 }, GUIDED_FILTER_EPS).unwrap();
        for y in 8..16 {
            for x in 0..16 {
                assert_eq!(w.get(y, x), 0.0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn mask_in_unit_range(seed in 0u64..10_000) {
            let mut rng = Lcg(seed);
            let src = random_image(&mut rng, 12, 12, 3);
            let dlt = random_image(&mut rng, 12, 12, 3);
            let p = HfMaskParams { radius: 3, gain: 10.0, median: 3, sigma: 1.0 };
            let w = build_hf_mask(&src, &dlt, &full_fg(12, 12), &p, GUIDED_FILTER_EPS).unwrap();
            prop_assert!(w.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
