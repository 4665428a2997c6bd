//! Ambient removal and specular repair: flash captures to OLAT images.

use alloc::vec;
use alloc::vec::Vec;

use super::capture::OlatCapture;
use crate::error::{Error, Result};
use crate::image::{MaskImage, RasterImage, ValueRange};
use crate::imaging::color::lightness;
use crate::imaging::inpaint_diffusion;

/// Floor on the flash lightness in the ambient ratio.
pub const LIGHTNESS_FLOOR: f64 = 1e-4;
/// Floor on the mean flash image in the specular detector.
pub const FLASH_MEAN_FLOOR: f32 = 1e-4;
/// Detector response at which a pixel is treated as a specular hole.
pub const SPECULAR_THRESHOLD: f32 = 0.5;

fn rgb_at(img: &RasterImage, i: usize) -> [f64; 3] {
    let d = img.data();
    [d[3 * i] as f64, d[3 * i + 1] as f64, d[3 * i + 2] as f64]
}

/// Removes the room-light contribution from a flash image:
/// `(1 - L(room) / L(flash)) * flash`, with the ratio clamped to `[0, 1]`.
pub fn remove_ambient(flash: &RasterImage, room: &RasterImage) -> Result<RasterImage> {
    flash.ensure_same_size(room, "room image")?;
    if flash.channels() != 3 || room.channels() != 3 {
        return Err(Error::contract("ambient removal needs RGB images"));
    }
    let n = flash.height() * flash.width();
    let mut out = vec![0.0f32; n * 3];
    for i in 0..n {
        let f = rgb_at(flash, i);
        let lf = lightness(f);
        if lf <= 0.0 {
            continue;
        }
        let ratio = (1.0 - lightness(rgb_at(room, i)) / lf.max(LIGHTNESS_FLOOR)).clamp(0.0, 1.0);
        for c in 0..3 {
            out[3 * i + c] = (ratio * f[c]) as f32;
        }
    }
    RasterImage::new(flash.height(), flash.width(), 3, ValueRange::Unit, out)
}

/// Pixelwise mean of the flash images.
pub fn flash_mean(flashes: &[RasterImage]) -> Result<RasterImage> {
    let first = flashes.first().ok_or_else(|| Error::contract("no flash images"))?;
    let mut acc = vec![0.0f64; first.data().len()];
    for f in flashes {
        if f.dims() != first.dims() {
            return Err(Error::ShapeMismatch {
                what: "flash image",
                expected: first.dims(),
                got: f.dims(),
            });
        }
        for (a, v) in acc.iter_mut().zip(f.data()) {
            *a += *v as f64;
        }
    }
    let k = flashes.len() as f64;
    let (h, w, c) = first.dims();
    RasterImage::new(h, w, c, ValueRange::Unit, acc.into_iter().map(|v| (v / k) as f32).collect())
}

/// Specular response `min(1, room^2 / mean)^4`, maximised over channels.
pub fn specular_response(room: &RasterImage, mean: &RasterImage) -> Result<MaskImage> {
    if room.dims() != mean.dims() {
        return Err(Error::ShapeMismatch {
            what: "flash mean",
            expected: room.dims(),
            got: mean.dims(),
        });
    }
    let c = room.channels();
    let n = room.height() * room.width();
    let (r, m) = (room.data(), mean.data());
    let data = (0..n)
        .map(|i| {
            (0..c)
                .map(|ch| {
                    let k = i * c + ch;
                    let t = (r[k] * r[k] / m[k].max(FLASH_MEAN_FLOOR)).min(1.0);
                    t * t * t * t
                })
                .fold(0.0f32, f32::max)
        })
        .collect();
    MaskImage::new(room.height(), room.width(), data)
}

/// Binary specular-hole mask (response thresholded at [`SPECULAR_THRESHOLD`]).
pub fn detect_speculars(room: &RasterImage, mean: &RasterImage) -> Result<MaskImage> {
    Ok(specular_response(room, mean)?.binarize(SPECULAR_THRESHOLD))
}

/// OLAT images recovered from a capture, plus the room image with its
/// specular highlights repaired.
#[derive(Clone, Debug, PartialEq)]
pub struct OlatSet {
    pub olats: Vec<RasterImage>,
    pub room_nospec: RasterImage,
    pub specular_holes: MaskImage,
}

pub fn build_olat_set(capture: &OlatCapture) -> Result<OlatSet> {
    capture.validate()?;
    let mean = flash_mean(&capture.flash_images)?;
    let holes = detect_speculars(&capture.room_image, &mean)?;
    let olats = capture
        .flash_images
        .iter()
        .map(|f| inpaint_diffusion(&remove_ambient(f, &capture.room_image)?, &holes))
        .collect::<Result<Vec<_>>>()?;
    let room_nospec = inpaint_diffusion(&capture.room_image, &holes)?;
    Ok(OlatSet {
        olats,
        room_nospec,
        specular_holes: holes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_image, Lcg};
    use proptest::prelude::*;

    fn gray(v: f32) -> RasterImage {
        RasterImage::filled(2, 2, 3, ValueRange::Unit, v).unwrap()
    }

    fn gray4(v: f32) -> RasterImage {
        RasterImage::filled(4, 4, 3, ValueRange::Unit, v).unwrap()
    }

    #[test]
    fn black_room_keeps_flash() {
        let mut rng = Lcg(3);
        let flash = random_image(&mut rng, 4, 4, 3);
        assert_eq!(remove_ambient(&flash, &gray4(0.0)).unwrap(), flash);
    }

    #[test]
    fn room_equal_flash_removes_everything() {
        let mut rng = Lcg(5);
        let flash = random_image(&mut rng, 4, 4, 3);
        let out = remove_ambient(&flash, &flash).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gray_pair_uses_lab_ratio() {
        // L(0.25) = 26.982918, L(0.5) = 53.388965
        let out = remove_ambient(&gray(0.5), &gray(0.25)).unwrap();
        let want = 0.5 * (1.0 - 26.982_918 / 53.388_965);
        for v in out.data() {
            assert!((*v as f64 - want).abs() < 1e-5, "{v} vs {want}");
        }
    }

    #[test]
    fn speculars_detected_on_saturated_room() {
        let room = RasterImage::from_fn(2, 2, 3, ValueRange::Unit, |y, x, _| if (y, x) == (0, 1) { 1.0 } else { 0.0 }).unwrap();
        let mean = RasterImage::filled(2, 2, 3, ValueRange::Unit, 0.25).unwrap();
        let m = detect_speculars(&room, &mean).unwrap();
        assert_eq!(m.data(), &[0.0, 1.0, 0.0, 0.0]);
        let zero = detect_speculars(&gray(0.0), &mean).unwrap();
        assert!(zero.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn specular_response_matches_formula() {
        let room = RasterImage::from_fn(3, 5, 3, ValueRange::Unit, |y, x, c| (x as f32 * 0.2 + y as f32 * 0.1 + c as f32 * 0.05).min(1.0)).unwrap();
        let mean = RasterImage::filled(3, 5, 3, ValueRange::Unit, 0.4).unwrap();
        let r = specular_response(&room, &mean).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                let want = (0..3)
                    .map(|c| {
                        let v = room.get(y, x, c) as f64;
                        (v * v / 0.4).min(1.0).powi(4)
                    })
                    .fold(0.0, f64::max);
                assert!((r.get(y, x) as f64 - want).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn brighter_room_never_increases_output(seed in 0u64..500, bump in 0.0f32..0.5) {
            let mut rng = Lcg(seed);
            let flash = random_image(&mut rng, 4, 4, 3);
            let room = random_image(&mut rng, 4, 4, 3).map(ValueRange::Unit, |v| v * 0.5).unwrap();
            let brighter = room.map(ValueRange::Unit, |v| v + bump).unwrap();
            let a = remove_ambient(&flash, &room).unwrap();
            let b = remove_ambient(&flash, &brighter).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(*y <= *x + 1e-7);
            }
        }
    }
}
