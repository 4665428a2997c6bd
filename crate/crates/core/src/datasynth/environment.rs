//! Source-image composites: tinted two-light blends and their variants.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::SynthConfig;
use crate::error::{Error, Result};
use crate::image::{RasterImage, ValueRange};

/// Rec. 709 luminance weights.
const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Gains that leave an image unchanged.
pub const IDENTITY_GAINS: [f32; 3] = [1.0, 1.0, 1.0];

/// RGB gains of a blackbody at `kelvin`, scaled to unit luminance.
///
/// Uses the Tanner Helland curve fit, valid roughly from 1000 K to 40000 K.
pub fn tint_gains(kelvin: f64) -> [f32; 3] {
    let t = kelvin / 100.0;
    let r = if t <= 66.0 {
        255.0
    } else {
        329.698_727_446 * libm::pow(t - 60.0, -0.133_204_759_2)
    };
    let g = if t <= 66.0 {
        99.470_802_586_1 * libm::log(t) - 161.119_568_166_1
    } else {
        288.122_169_528_3 * libm::pow(t - 60.0, -0.075_514_849_2)
    };
    let b = if t >= 66.0 {
        255.0
    } else if t <= 19.0 {
        0.0
    } else {
        138.517_731_223_1 * libm::log(t - 10.0) - 305.044_792_730_7
    };
    let rgb = [r, g, b].map(|v| v.clamp(0.0, 255.0) / 255.0);
    let y: f64 = rgb.iter().zip(LUMA).map(|(v, k)| v * k).sum();
    rgb.map(|v| (v / y) as f32)
}

/// `clamp(boost * (w * gains_a * a + (1 - w) * gains_b * b))`.
pub fn blend(
    a: &RasterImage,
    b: &RasterImage,
    weight: f32,
    gains_a: [f32; 3],
    gains_b: [f32; 3],
    boost: f32,
) -> Result<RasterImage> {
    if a.channels() != 3 {
        return Err(Error::contract("blending needs RGB images"));
    }
    let mut i = 0usize;
    a.zip_map(b, ValueRange::Unit, |x, y| {
        let c = i % 3;
        i += 1;
        boost * (weight * gains_a[c] * x + (1.0 - weight) * gains_b[c] * y)
    })
}

/// Per-channel gain times a scalar boost, clamped.
pub fn tinted(img: &RasterImage, gains: [f32; 3], boost: f32) -> Result<RasterImage> {
    blend(img, img, 1.0, gains, gains, boost)
}

/// Which composite a training source image is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Weighted blend of two differently tinted OLATs.
    TwoLight,
    /// A two-light blend with its brightness raised.
    Boosted,
    /// The evenly lit target with a colour cast.
    TintedDelit,
    /// The room-lights-only image with a colour cast.
    RoomOnly,
}

/// Everything drawn at random for one source composite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentParams {
    pub kind: SourceKind,
    pub light_a: usize,
    pub light_b: usize,
    pub weight: f32,
    pub kelvin_a: f64,
    pub kelvin_b: f64,
    pub boost: f32,
}

fn pick_kind(config: &SynthConfig, rng: &mut impl Rng) -> SourceKind {
    let u: f64 = rng.gen();
    let k = config.kinds;
    if u < k.boosted {
        SourceKind::Boosted
    } else if u < k.boosted + k.tinted_delit {
        SourceKind::TintedDelit
    } else if u < k.boosted + k.tinted_delit + k.room_only {
        SourceKind::RoomOnly
    } else {
        SourceKind::TwoLight
    }
}

fn draw(range: [f64; 2], rng: &mut impl Rng) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..=range[1])
    }
}

/// Draws a composite recipe over `olat_count` lights.
pub fn sample_environment(olat_count: usize, config: &SynthConfig, rng: &mut impl Rng) -> Result<EnvironmentParams> {
    if olat_count < 2 {
        return Err(Error::contract("environment composites need at least two OLATs"));
    }
    let kind = pick_kind(config, rng);
    let light_a = rng.gen_range(0..olat_count);
    let mut light_b = rng.gen_range(0..olat_count - 1);
    if light_b >= light_a {
        light_b += 1;
    }
    let weight = draw(config.blend_weight_range, rng) as f32;
    let kelvin_a = draw(config.tint_temperature_range, rng);
    let kelvin_b = draw(config.tint_temperature_range, rng);
    let boost = draw(config.intensity_boost_range, rng) as f32;
    let (weight, boost) = match kind {
        SourceKind::TwoLight => (weight, 1.0),
        SourceKind::Boosted => (weight, boost),
        SourceKind::TintedDelit | SourceKind::RoomOnly => (1.0, 1.0),
    };
    Ok(EnvironmentParams {
        kind,
        light_a,
        light_b,
        weight,
        kelvin_a,
        kelvin_b,
        boost,
    })
}

/// Renders a recipe. `dlt` and `room_nospec` are only read by the
/// variants that need them.
pub fn render_environment(
    params: &EnvironmentParams,
    olats: &[RasterImage],
    dlt: &RasterImage,
    room_nospec: &RasterImage,
) -> Result<RasterImage> {
    let ga = tint_gains(params.kelvin_a);
    match params.kind {
        SourceKind::TwoLight | SourceKind::Boosted => {
            let a = olats.get(params.light_a).ok_or_else(|| Error::contract("light index out of range"))?;
            let b = olats.get(params.light_b).ok_or_else(|| Error::contract("light index out of range"))?;
            blend(a, b, params.weight, ga, tint_gains(params.kelvin_b), params.boost)
        }
        SourceKind::TintedDelit => tinted(dlt, ga, 1.0),
        SourceKind::RoomOnly => tinted(room_nospec, ga, 1.0),
    }
}

/// A random two-light composite (boosted with the configured probability).
pub fn composite_environment(
    olats: &[RasterImage],
    config: &SynthConfig,
    rng: &mut impl Rng,
) -> Result<(RasterImage, EnvironmentParams)> {
    let mut cfg = *config;
    cfg.kinds.tinted_delit = 0.0;
    cfg.kinds.room_only = 0.0;
    let params = sample_environment(olats.len(), &cfg, rng)?;
    let img = blend(
        &olats[params.light_a],
        &olats[params.light_b],
        params.weight,
        tint_gains(params.kelvin_a),
        tint_gains(params.kelvin_b),
        params.boost,
    )?;
    Ok((img, params))
}
