//! Checkpoint inference and the metric report over a manifest split.

use std::fs;
use std::path::Path;

use delight_core::evalx::{ImageMetrics, MetricReport, PerceptualMetric};
use delight_core::imaging::resize;
use delight_core::nn::{DelightModel, Tensor};
use delight_core::trainer::{image_to_input, output_to_image};
use delight_core::{MaskImage, RasterImage, ValueRange};

use crate::checkpoint::Checkpoint;
use crate::dataset::{Manifest, Split};
use crate::error::{CliError, Result};
use crate::io::{read_mask, read_rgb, write_png, Depth};

/// De-lit decoder inference at the training resolution.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub model: DelightModel,
    pub params: Vec<f32>,
    pub resolution: usize,
}

impl Predictor {
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let model = ck.model()?;
        Ok(Predictor {
            model,
            params: ck.params,
            resolution: ck.header.train.resolution,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    /// Network input size for an `h`×`w` image: the longer side scaled to
    /// the training resolution, both sides rounded to the model's stride.
    pub fn model_size(&self, h: usize, w: usize) -> (usize, usize) {
        let q = 1usize << self.model.config().depth;
        let s = self.resolution as f64 / h.max(w) as f64;
        let r = |n: usize| ((n as f64 * s / q as f64).round() as usize).max(1) * q;
        (r(h), r(w))
    }

    /// De-lit image at the input's size, and the shading offset when asked.
    /// With a foreground mask the input is masked first and both outputs
    /// are masked to it.
    pub fn run(&self, img: &RasterImage, fg: Option<&MaskImage>, want_offset: bool) -> Result<(RasterImage, Option<RasterImage>)> {
        let input = match fg {
            Some(m) => img.masked(m, 0.0)?,
            None => img.clone(),
        };
        let (h, w) = (img.height(), img.width());
        let (mh, mw) = self.model_size(h, w);
        let x = if (mh, mw) == (h, w) { input } else { resize(&input, mh, mw)? };
        let (out, _) = self.model.forward(&self.params, &image_to_input::<f32>(&x), want_offset)?;
        let back = |img: RasterImage| -> Result<RasterImage> {
            let img = if (mh, mw) == (h, w) { img } else { resize(&img, h, w)? };
            Ok(match fg {
                Some(m) => img.masked(m, 0.0)?,
                None => img,
            })
        };
        let dlt = back(output_to_image(&out.dlt)?)?;
        let off = out
            .off
            .map(|t: Tensor<f32>| t.to_image(ValueRange::Offset).map_err(CliError::from).and_then(back))
            .transpose()?;
        Ok((dlt, off))
    }
}

/// One image to evaluate; ground truth and weight mask may be absent.
#[derive(Clone, Debug)]
pub struct EvalInput {
    pub id: String,
    pub src: RasterImage,
    pub gt: Option<RasterImage>,
    pub foreground: MaskImage,
    pub hf_mask: Option<MaskImage>,
}

fn optional<T>(path: &Path, read: impl Fn(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        read(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Which part of the manifest to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitFilter {
    All,
    Only(Split),
}

impl SplitFilter {
    pub fn admits(self, s: Split) -> bool {
        match self {
            SplitFilter::All => true,
            SplitFilter::Only(x) => x == s,
        }
    }
}

/// Sample directories need `src.png` and `fg.png`; `dlt.png` and `w.png`
/// are optional. Captures are synthesized in memory.
pub fn load_inputs(
    manifest: &Manifest,
    filter: SplitFilter,
    synth: &delight_core::datasynth::SynthConfig,
    per_capture: usize,
) -> Result<Vec<EvalInput>> {
    let mut out = Vec::new();
    for s in &manifest.samples {
        if !filter.admits(Split::of(&s.id, s.split)) {
            continue;
        }
        let dir = manifest.resolve(&s.dir);
        let ctx = |e: CliError| e.context(format!("sample `{}`", s.id));
        out.push(EvalInput {
            id: s.id.clone(),
            src: read_rgb(&dir.join("src.png")).map_err(ctx)?,
            gt: optional(&dir.join("dlt.png"), read_rgb).map_err(ctx)?,
            foreground: read_mask(&dir.join("fg.png")).map_err(ctx)?.binarize(0.5),
            hf_mask: optional(&dir.join("w.png"), read_mask).map_err(ctx)?,
        });
    }
    if !manifest.captures.is_empty() {
        let only_captures = Manifest {
            samples: Vec::new(),
            ..manifest.clone()
        };
        for (ex, split) in only_captures.examples(synth, per_capture)? {
            if filter.admits(split) {
                out.push(EvalInput {
                    id: ex.id,
                    src: ex.sample.src,
                    gt: Some(ex.sample.dlt),
                    foreground: ex.sample.foreground,
                    hf_mask: Some(ex.sample.hf_mask),
                });
            }
        }
    }
    Ok(out)
}

fn gray_to_rgb(m: &MaskImage) -> RasterImage {
    RasterImage::from_fn(m.height(), m.width(), 3, ValueRange::Unit, |y, x, _| m.get(y, x)).expect("mask dims")
}

/// Panels side by side: input, output, ground truth, weight mask (black
/// where absent).
pub fn grid(input: &EvalInput, output: &RasterImage) -> Result<RasterImage> {
    let (h, w) = (input.src.height(), input.src.width());
    let black = RasterImage::filled(h, w, 3, ValueRange::Unit, 0.0)?;
    let mask = input.hf_mask.as_ref().map(gray_to_rgb).unwrap_or_else(|| black.clone());
    let panels = [&input.src, output, input.gt.as_ref().unwrap_or(&black), &mask];
    let mut planes = Vec::with_capacity(3);
    for c in 0..3 {
        let mut plane = Vec::with_capacity(h * w * 4);
        for y in 0..h {
            for p in &panels {
                plane.extend((0..w).map(|x| p.get(y, x, c)));
            }
        }
        planes.push(plane);
    }
    Ok(RasterImage::from_planes(&planes, h, 4 * w, ValueRange::Unit)?)
}

/// Runs the predictor over `inputs`, writing `grid/<id>.png` and
/// `report.json` under `out`.
pub fn evaluate(
    predictor: &Predictor,
    inputs: &[EvalInput],
    out: &Path,
    config_hash: String,
    lpips: Option<&dyn PerceptualMetric>,
) -> Result<MetricReport> {
    let grid_dir = out.join("grid");
    fs::create_dir_all(&grid_dir).map_err(|e| CliError::from_io(&grid_dir, e))?;
    let mut images = Vec::with_capacity(inputs.len());
    for item in inputs {
        let (pred, _) = predictor.run(&item.src, Some(&item.foreground), false)?;
        images.push(match &item.gt {
            Some(gt) => ImageMetrics::compute(&item.id, &pred, gt, &item.foreground, lpips)
                .map_err(|e| CliError::from(e).context(&item.id))?,
            None => ImageMetrics::missing(&item.id),
        });
        write_png(&grid_dir.join(format!("{}.png", item.id)), &grid(item, &pred)?, Depth::Eight)?;
    }
    let report = MetricReport::new(images, config_hash, lpips);
    let path = out.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| CliError::from_io(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use delight_core::nn::ModelConfig;

    fn predictor() -> Predictor {
        let model = DelightModel::new(ModelConfig::scaled(2, 4, 1)).unwrap();
        let params = model.init_params();
        Predictor {
            model,
            params,
            resolution: 16,
        }
    }

    #[test]
    fn model_size_keeps_aspect_and_stride() {
        let p = predictor();
        assert_eq!(p.model_size(16, 16), (16, 16));
        assert_eq!(p.model_size(30, 60), (8, 16));
        assert_eq!(p.model_size(3, 100), (4, 16));
    }

    #[test]
    fn output_matches_input_size_and_mask() {
        let p = predictor();
        let img = RasterImage::from_fn(21, 13, 3, ValueRange::Unit, |y, x, c| ((y + x + c) % 5) as f32 / 5.0).unwrap();
        let fg = MaskImage::from_fn(21, 13, |y, _| if y < 10 { 1.0 } else { 0.0 }).unwrap();
        let (d, off) = p.run(&img, Some(&fg), true).unwrap();
        assert_eq!(d.dims(), (21, 13, 3));
        assert_eq!(off.unwrap().dims(), (21, 13, 3));
        assert!(d.data()[15 * 13 * 3..].iter().all(|v| *v == 0.0));
        assert_eq!(p.run(&img, None, false).unwrap().0, p.run(&img, None, false).unwrap().0);
    }

    #[test]
    fn report_flags_missing_ground_truth() {
        let p = predictor();
        let src = RasterImage::filled(16, 16, 3, ValueRange::Unit, 0.4).unwrap();
        let fg = MaskImage::from_fn(16, 16, |_, _| 1.0).unwrap();
        let inputs = vec![
            EvalInput {
                id: "a".into(),
                src: src.clone(),
                gt: Some(src.clone()),
                foreground: fg.clone(),
                hf_mask: None,
            },
            EvalInput {
                id: "b".into(),
                src,
                gt: None,
                foreground: fg,
                hf_mask: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let r = evaluate(&p, &inputs, dir.path(), "h".into(), None).unwrap();
        assert!(r.images[1].missing_gt);
        assert_eq!(r.aggregate.rmse, r.images[0].rmse);
        assert!(dir.path().join("grid/b.png").exists());
        let g = read_rgb(&dir.path().join("grid/a.png")).unwrap();
        assert_eq!(g.dims(), (16, 64, 3));
    }
}
