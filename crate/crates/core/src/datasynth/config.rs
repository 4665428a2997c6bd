use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the high-frequency shading mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HfMaskParams {
    pub radius: usize,
    pub gain: f32,
    pub median: usize,
    pub sigma: f32,
}

impl Default for HfMaskParams {
    fn default() -> Self {
        HfMaskParams {
            radius: 15,
            gain: 10.0,
            median: 5,
            sigma: 3.0,
        }
    }
}

/// How often each non-default source composite is drawn; the remainder is
/// the plain two-light blend.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindMix {
    pub boosted: f64,
    pub tinted_delit: f64,
    pub room_only: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        KindMix {
            boosted: 0.2,
            tinted_delit: 0.1,
            room_only: 0.1,
        }
    }
}

impl KindMix {
    pub const TWO_LIGHT_ONLY: KindMix = KindMix {
        boosted: 0.0,
        tinted_delit: 0.0,
        room_only: 0.0,
    };
}

/// Synthesis knobs. Radii default to values tuned for 480 px captures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Soft-shadow radius inside the nose and mouth regions.
    pub epsilon_radius: usize,
    /// Inclusive bounds of the soft-shadow radius elsewhere.
    pub kappa_range: [usize; 2],
    /// Colour temperature bounds in kelvin.
    pub tint_temperature_range: [f64; 2],
    pub intensity_boost_range: [f64; 2],
    /// Bounds of the weight given to the first light of a blend.
    pub blend_weight_range: [f64; 2],
    pub kinds: KindMix,
    pub hf_mask: HfMaskParams,
    pub guided_eps: f32,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            epsilon_radius: 7,
            kappa_range: [7, 35],
            tint_temperature_range: [2500.0, 10000.0],
            intensity_boost_range: [1.2, 1.8],
            blend_weight_range: [0.2, 0.8],
            kinds: KindMix::default(),
            hf_mask: HfMaskParams::default(),
            guided_eps: crate::imaging::GUIDED_FILTER_EPS,
            rng_seed: 0,
        }
    }
}

/// Capture size the default radii are tuned for.
pub const REFERENCE_SIZE: usize = 480;

impl SynthConfig {
    /// Defaults with every spatial radius scaled from 480 px to `size`
    /// (each radius stays at least 1, the median window at least 3).
    pub fn scaled_to(size: usize) -> SynthConfig {
        let d = SynthConfig::default();
        let s = size as f64 / REFERENCE_SIZE as f64;
        let r = |v: usize| ((v as f64 * s).round() as usize).max(1);
        let median = {
            let m = r(d.hf_mask.median);
            let m = if m % 2 == 0 { m + 1 } else { m };
            m.max(3)
        };
        SynthConfig {
            epsilon_radius: r(d.epsilon_radius),
            kappa_range: [r(d.kappa_range[0]), r(d.kappa_range[1])],
            hf_mask: HfMaskParams {
                radius: r(d.hf_mask.radius),
                median,
                sigma: ((d.hf_mask.sigma as f64 * s) as f32).max(0.5),
                gain: d.hf_mask.gain,
            },
            ..d
        }
    }

    pub fn with_seed(mut self, seed: u64) -> SynthConfig {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [k_lo, k_hi] = self.kappa_range;
        if self.epsilon_radius < 1 {
            return Err(Error::contract("epsilon radius must be at least 1"));
        }
        if k_lo > k_hi {
            return Err(Error::contract("kappa range is inverted"));
        }
        if self.epsilon_radius > k_lo {
            return Err(Error::contract("epsilon radius must not exceed the kappa range"));
        }
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.tint_temperature_range) || self.tint_temperature_range[0] < 1000.0 {
            return Err(Error::contract("tint temperature range must be ordered and above 1000 K"));
        }
        if !ordered(self.intensity_boost_range) || self.intensity_boost_range[0] <= 0.0 {
            return Err(Error::contract("intensity boost range must be ordered and positive"));
        }
        let [w_lo, w_hi] = self.blend_weight_range;
        if !ordered(self.blend_weight_range) || w_lo < 0.0 || w_hi > 1.0 {
            return Err(Error::contract("blend weight range must lie in [0, 1]"));
        }
        let k = self.kinds;
        let probs = [k.boosted, k.tinted_delit, k.room_only];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || probs.iter().sum::<f64>() > 1.0 {
            return Err(Error::contract("source kind probabilities must sum to at most 1"));
        }
        let hf = self.hf_mask;
        if hf.radius < 1 || hf.median.is_multiple_of(2) || !(hf.sigma > 0.0) || !(hf.gain > 0.0) {
            return Err(Error::contract("invalid high-frequency mask parameters"));
        }
        if !(self.guided_eps > 0.0) {
            return Err(Error::contract("guided filter regularizer must be positive"));
        }
        Ok(())
    }
}
