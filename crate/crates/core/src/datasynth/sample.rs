use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::capture::OlatCapture;
use super::config::SynthConfig;
use super::environment::{render_environment, sample_environment, tint_gains, EnvironmentParams};
use super::olat::{build_olat_set, OlatSet};
use super::soft::{build_hf_mask, synth_soft_shadow};
use super::target::build_delit_target;
use crate::error::{Error, Result};
use crate::image::{MaskImage, RasterImage, ValueRange};
use crate::rng;

/// Value given to background pixels of unit-range images.
pub const BACKGROUND_FILL: f32 = 0.0;
/// Tolerance of the definitional identities checked by [`TrainingSample::validate`].
pub const IDENTITY_TOLERANCE: f32 = 1e-6;

/// One supervised tuple. Unit-range images are black off the foreground.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub src: RasterImage,
    pub dlt: RasterImage,
    /// `src - dlt`.
    pub off: RasterImage,
    pub soft: RasterImage,
    /// `soft - dlt`.
    pub soft_off: RasterImage,
    pub hf_mask: MaskImage,
    pub foreground: MaskImage,
    pub fg_count: usize,
}

impl TrainingSample {
    /// Builds a sample from its unit-range images, deriving offsets, masking
    /// everything to the foreground and counting it.
    pub fn from_parts(
        src: &RasterImage,
        dlt: &RasterImage,
        soft: &RasterImage,
        hf_mask: &MaskImage,
        foreground: &MaskImage,
    ) -> Result<TrainingSample> {
        let src = src.masked(foreground, BACKGROUND_FILL)?;
        let dlt = dlt.masked(foreground, BACKGROUND_FILL)?;
        let soft = soft.masked(foreground, BACKGROUND_FILL)?;
        let off = src.zip_map(&dlt, ValueRange::Offset, |a, b| a - b)?;
        let soft_off = soft.zip_map(&dlt, ValueRange::Offset, |a, b| a - b)?;
        let hf_mask = hf_mask.zip_map(foreground, |w, f| w * f)?;
        let sample = TrainingSample {
            src,
            dlt,
            off,
            soft,
            soft_off,
            hf_mask,
            foreground: foreground.clone(),
            fg_count: foreground.count_nonzero(),
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn height(&self) -> usize {
        self.src.height()
    }

    pub fn width(&self) -> usize {
        self.src.width()
    }

    /// Checks shapes, ranges, the offset identities, background values and
    /// the foreground count.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let images = [
            (&self.src, "src", ValueRange::Unit),
            (&self.dlt, "dlt", ValueRange::Unit),
            (&self.off, "off", ValueRange::Offset),
            (&self.soft, "soft", ValueRange::Unit),
            (&self.soft_off, "soft_off", ValueRange::Offset),
        ];
        for (img, name, range) in images {
            if img.dims() != (h, w, 3) || img.range() != range {
                return Err(Error::contract(format!("{name} has the wrong shape or range")));
            }
        }
        for (m, name) in [(&self.hf_mask, "hf_mask"), (&self.foreground, "foreground")] {
            if m.height() != h || m.width() != w {
                return Err(Error::contract(format!("{name} has the wrong size")));
            }
        }
        if !self.foreground.is_binary() {
            return Err(Error::contract("foreground is not binary"));
        }
        if self.fg_count == 0 || self.fg_count != self.foreground.count_nonzero() {
            return Err(Error::contract("foreground count does not match the mask"));
        }
        let (src, dlt, off, soft, soft_off) = (
            self.src.data(),
            self.dlt.data(),
            self.off.data(),
            self.soft.data(),
            self.soft_off.data(),
        );
        for p in 0..h * w {
            let fg = self.foreground.data()[p] != 0.0;
            if !fg && self.hf_mask.data()[p] != 0.0 {
                return Err(Error::contract(format!("hf_mask is nonzero on background pixel {p}")));
            }
            for i in 3 * p..3 * p + 3 {
                if fg {
                    if (off[i] - (src[i] - dlt[i])).abs() > IDENTITY_TOLERANCE
                        || (soft_off[i] - (soft[i] - dlt[i])).abs() > IDENTITY_TOLERANCE
                    {
                        return Err(Error::contract(format!("offset identity broken at pixel {p}")));
                    }
                } else if src[i] != BACKGROUND_FILL
                    || dlt[i] != BACKGROUND_FILL
                    || soft[i] != BACKGROUND_FILL
                    || off[i] != 0.0
                    || soft_off[i] != 0.0
                {
                    return Err(Error::contract(format!("background pixel {p} is not filled")));
                }
            }
        }
        Ok(())
    }
}

/// Random draws behind a sample, for reproduction and bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub seed: u64,
    pub index: u64,
    pub kappa: usize,
    pub epsilon: usize,
    pub environment: EnvironmentParams,
    pub tint_a: [f32; 3],
    pub tint_b: [f32; 3],
}

/// Per-capture work shared by every sample drawn from it.
#[derive(Clone, Debug)]
pub struct SynthesisContext<'a> {
    pub capture: &'a OlatCapture,
    pub olat_set: OlatSet,
    pub dlt: RasterImage,
}

impl<'a> SynthesisContext<'a> {
    pub fn prepare(capture: &'a OlatCapture) -> Result<SynthesisContext<'a>> {
        capture.validate().map_err(|e| e.in_stage("capture"))?;
        if capture.flash_images.len() < 2 {
            return Err(Error::contract("synthesis needs at least two flash images").in_stage("capture"));
        }
        let olat_set = build_olat_set(capture).map_err(|e| e.in_stage("olats"))?;
        let dlt = build_delit_target(&olat_set.olats, &olat_set.room_nospec).map_err(|e| e.in_stage("delit_target"))?;
        Ok(SynthesisContext { capture, olat_set, dlt })
    }

    /// Draws one sample with the given generator.
    pub fn assemble_from(&self, config: &SynthConfig, rng: &mut impl Rng) -> Result<(TrainingSample, EnvironmentParams, usize)> {
        let cap = self.capture;
        let env = sample_environment(self.olat_set.olats.len(), config, rng).map_err(|e| e.in_stage("environment"))?;
        let src = render_environment(&env, &self.olat_set.olats, &self.dlt, &self.olat_set.room_nospec)
            .map_err(|e| e.in_stage("environment"))?;
        let [k_lo, k_hi] = config.kappa_range;
        let kappa = rng.gen_range(k_lo..=k_hi);
        let soft = synth_soft_shadow(
            &src,
            &self.dlt,
            &cap.parsing,
            &cap.foreground,
            config.epsilon_radius,
            kappa,
            config.guided_eps,
        )
        .map_err(|e| e.in_stage("soft_shadow"))?;
        let w = build_hf_mask(&src, &self.dlt, &cap.foreground, &config.hf_mask, config.guided_eps)
            .map_err(|e| e.in_stage("hf_mask"))?;
        let sample = TrainingSample::from_parts(&src, &self.dlt, &soft, &w, &cap.foreground)
            .map_err(|e| e.in_stage("assemble"))?;
        Ok((sample, env, kappa))
    }

    /// Sample number `index` of this capture, drawn from its own stream.
    pub fn sample(&self, config: &SynthConfig, index: u64) -> Result<(TrainingSample, SampleMeta)> {
        let mut r = rng::stream(config.rng_seed, &self.capture.id, index);
        let (sample, env, kappa) = self.assemble_from(config, &mut r)?;
        let meta = SampleMeta {
            id: self.capture.id.clone(),
            seed: config.rng_seed,
            index,
            kappa,
            epsilon: config.epsilon_radius,
            environment: env,
            tint_a: tint_gains(env.kelvin_a),
            tint_b: tint_gains(env.kelvin_b),
        };
        Ok((sample, meta))
    }
}

/// Runs the full chain on one capture with an explicit generator.
pub fn assemble_sample(capture: &OlatCapture, config: &SynthConfig, rng: &mut impl Rng) -> Result<TrainingSample> {
    config.validate()?;
    Ok(SynthesisContext::prepare(capture)?.assemble_from(config, rng)?.0)
}

/// `count` samples of one capture, each from the stream `(seed, id, index)`.
pub fn synthesize(capture: &OlatCapture, config: &SynthConfig, count: usize) -> Result<Vec<(TrainingSample, SampleMeta)>> {
    config.validate()?;
    let ctx = SynthesisContext::prepare(capture)?;
    (0..count as u64).map(|i| ctx.sample(config, i)).collect()
}
