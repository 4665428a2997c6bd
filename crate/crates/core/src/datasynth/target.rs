//! The evenly lit target built from the OLAT set.

use alloc::vec;

use crate::error::{Error, Result};
use crate::image::{RasterImage, ValueRange};
use crate::imaging::color::{lab_to_srgb, lightness, srgb_to_lab};

/// Weight of the room-light lightness added back onto the OLAT mean.
pub const ROOM_LIGHTNESS_GAIN: f64 = 6.0;

/// Mean of the OLATs with `ROOM_LIGHTNESS_GAIN * L(room_nospec)` added to its
/// Lab lightness, converted back to sRGB and clamped.
pub fn build_delit_target(olats: &[RasterImage], room_nospec: &RasterImage) -> Result<RasterImage> {
    let first = olats.first().ok_or_else(|| Error::contract("delit target needs at least one OLAT"))?;
    let (h, w, c) = first.dims();
    if c != 3 {
        return Err(Error::contract("delit target needs RGB OLATs"));
    }
    for o in olats {
        first.ensure_same_size(o, "OLAT image")?;
    }
    first.ensure_same_size(room_nospec, "room image")?;
    let mut acc = vec![0.0f64; h * w * 3];
    for o in olats {
        for (a, v) in acc.iter_mut().zip(o.data()) {
            *a += *v as f64;
        }
    }
    let k = olats.len() as f64;
    let room = room_nospec.data();
    let mut out = vec![0.0f32; h * w * 3];
    for i in 0..h * w {
        let mean = [acc[3 * i] / k, acc[3 * i + 1] / k, acc[3 * i + 2] / k];
        let add = ROOM_LIGHTNESS_GAIN
            * lightness([room[3 * i] as f64, room[3 * i + 1] as f64, room[3 * i + 2] as f64]);
        let rgb = if add > 0.0 {
            let mut lab = srgb_to_lab(mean);
            lab[0] += add;
            lab_to_srgb(lab)
        } else {
            mean
        };
        for ch in 0..3 {
            out[3 * i + ch] = rgb[ch] as f32;
        }
    }
    RasterImage::new(h, w, 3, ValueRange::Unit, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_image, Lcg};

    #[test]
    fn identical_olats_and_black_room_give_the_olat() {
        let mut rng = Lcg(11);
        let x = random_image(&mut rng, 5, 4, 3);
        let black = RasterImage::filled(5, 4, 3, ValueRange::Unit, 0.0).unwrap();
        let out = build_delit_target(&[x.clone(), x.clone(), x.clone()], &black).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_list_is_an_error() {
        let black = RasterImage::filled(2, 2, 3, ValueRange::Unit, 0.0).unwrap();
        assert!(build_delit_target(&[], &black).is_err());
    }

    #[test]
    fn gray_pixel_lightness_shift() {
        // Grays stay neutral in Lab, so the result is the gray whose L equals
        // L(mean) + 6 L(room). Mean of 0.2 and 0.4 is 0.3: L(0.3) = 32.5332;
        // L(0.02) = 1.3983 (linear segment), so target L = 40.9229 -> sRGB 0.378300.
        let a = RasterImage::filled(1, 2, 3, ValueRange::Unit, 0.2).unwrap();
        let b = RasterImage::filled(1, 2, 3, ValueRange::Unit, 0.4).unwrap();
        let room = RasterImage::filled(1, 2, 3, ValueRange::Unit, 0.02).unwrap();
        let out = build_delit_target(&[a, b], &room).unwrap();
        for v in out.data() {
            assert!((*v as f64 - 0.378_300).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn saturates_at_one() {
        let a = RasterImage::filled(1, 1, 3, ValueRange::Unit, 0.9).unwrap();
        let room = RasterImage::filled(1, 1, 3, ValueRange::Unit, 0.5).unwrap();
        let out = build_delit_target(&[a], &room).unwrap();
        assert!(out.data().iter().all(|v| *v == 1.0));
    }
}
