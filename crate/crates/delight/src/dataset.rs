//! Dataset manifests, capture loading, and per-sample directories.

use std::fs;
use std::path::{Path, PathBuf};

use delight_core::datasynth::{synthesize, OlatCapture, Parsing, SampleMeta, SynthConfig, SynthesisContext, TrainingSample};
use delight_core::rng::id_hash;
use delight_core::trainer::Example;
use delight_core::ValueRange;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{read_mask, read_rawf, read_rgb, write_mask_png, write_png, write_rawf, Depth};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureEntry {
    pub id: String,
    pub flash_paths: Vec<PathBuf>,
    pub room_path: PathBuf,
    pub foreground_path: PathBuf,
    pub nose_path: PathBuf,
    pub mouth_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Captures and/or synthesized samples. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default = "manifest_version")]
    pub version: u32,
    #[serde(default)]
    pub captures: Vec<CaptureEntry>,
    #[serde(default)]
    pub samples: Vec<SampleEntry>,
    #[serde(skip)]
    pub base: PathBuf,
}

fn manifest_version() -> u32 {
    MANIFEST_VERSION
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            captures: Vec::new(),
            samples: Vec::new(),
            base: PathBuf::new(),
        }
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(CliError::bad_input(format!("unsupported manifest version {}", m.version)));
        }
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| CliError::from_io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn load_capture(&self, entry: &CaptureEntry) -> Result<OlatCapture> {
        let ctx = |e: CliError| e.context(format!("capture `{}`", entry.id));
        let flash_images = entry
            .flash_paths
            .iter()
            .map(|p| read_rgb(&self.resolve(p)))
            .collect::<Result<Vec<_>>>()
            .map_err(ctx)?;
        let capture = OlatCapture {
            id: entry.id.clone(),
            flash_images,
            room_image: read_rgb(&self.resolve(&entry.room_path)).map_err(ctx)?,
            foreground: read_mask(&self.resolve(&entry.foreground_path)).map_err(ctx)?.binarize(0.5),
            parsing: Parsing {
                nose: read_mask(&self.resolve(&entry.nose_path)).map_err(ctx)?.binarize(0.5),
                mouth: read_mask(&self.resolve(&entry.mouth_path)).map_err(ctx)?.binarize(0.5),
            },
        };
        capture
            .validate()
            .map_err(|e| CliError::bad_input(format!("capture `{}`: {e}", entry.id)))?;
        Ok(capture)
    }

    /// Loads every listed sample directory.
    pub fn load_examples(&self) -> Result<Vec<(Example, Split)>> {
        self.samples
            .iter()
            .map(|s| {
                let ex = Example {
                    id: s.id.clone(),
                    sample: read_sample_dir(&self.resolve(&s.dir))?.0,
                };
                Ok((ex, Split::of(&s.id, s.split)))
            })
            .collect()
    }

    /// Listed samples followed by `per_capture` samples synthesized in
    /// memory from each listed capture. Synthesized samples inherit their
    /// capture's split when it has one.
    pub fn examples(&self, synth: &SynthConfig, per_capture: usize) -> Result<Vec<(Example, Split)>> {
        let mut out = self.load_examples()?;
        for entry in &self.captures {
            let cap = self.load_capture(entry)?;
            for (sample, meta) in synthesize(&cap, synth, per_capture).map_err(|e| CliError::from(e).context(&entry.id))? {
                let id = sample_id(&entry.id, meta.index);
                let split = Split::of(&id, entry.split);
                out.push((Example { id, sample }, split));
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// An explicit split, or validation for a tenth of ids by hash.
    pub fn of(id: &str, explicit: Option<Split>) -> Split {
        explicit.unwrap_or(if is_validation(id) { Split::Val } else { Split::Train })
    }
}

/// Samples whose id hash falls in the lowest tenth are held out for validation.
pub fn is_validation(id: &str) -> bool {
    id_hash(id).is_multiple_of(10)
}

/// Id of synthesized sample `index` of a capture.
pub fn sample_id(capture_id: &str, index: u64) -> String {
    format!("{capture_id}-{index:03}")
}

/// Writes a capture as PNGs under `dir` and returns its manifest entry
/// (paths relative to `rel_base`).
pub fn write_capture(dir: &Path, rel_base: &Path, capture: &OlatCapture) -> Result<CaptureEntry> {
    fs::create_dir_all(dir).map_err(|e| CliError::from_io(dir, e))?;
    let rel = |name: &str| -> PathBuf {
        let full = dir.join(name);
        full.strip_prefix(rel_base).map(Path::to_path_buf).unwrap_or(full)
    };
    let mut flash_paths = Vec::new();
    for (i, f) in capture.flash_images.iter().enumerate() {
        let name = format!("flash_{i:02}.png");
        write_png(&dir.join(&name), f, Depth::Sixteen)?;
        flash_paths.push(rel(&name));
    }
    write_png(&dir.join("room.png"), &capture.room_image, Depth::Sixteen)?;
    write_mask_png(&dir.join("fg.png"), &capture.foreground, Depth::Eight)?;
    write_mask_png(&dir.join("nose.png"), &capture.parsing.nose, Depth::Eight)?;
    write_mask_png(&dir.join("mouth.png"), &capture.parsing.mouth, Depth::Eight)?;
    Ok(CaptureEntry {
        id: capture.id.clone(),
        flash_paths,
        room_path: rel("room.png"),
        foreground_path: rel("fg.png"),
        nose_path: rel("nose.png"),
        mouth_path: rel("mouth.png"),
        split: None,
    })
}

/// Tolerance between stored offsets and offsets rebuilt from the 16-bit PNGs.
pub const STORED_OFFSET_TOLERANCE: f32 = 1e-4;

/// Writes the per-sample directory layout.
pub fn write_sample_dir(dir: &Path, sample: &TrainingSample, meta: &SampleMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::from_io(dir, e))?;
    write_png(&dir.join("src.png"), &sample.src, Depth::Sixteen)?;
    write_png(&dir.join("dlt.png"), &sample.dlt, Depth::Sixteen)?;
    write_png(&dir.join("soft.png"), &sample.soft, Depth::Sixteen)?;
    write_rawf(&dir.join("off.rawf"), &sample.off)?;
    write_rawf(&dir.join("soft_off.rawf"), &sample.soft_off)?;
    write_mask_png(&dir.join("w.png"), &sample.hf_mask, Depth::Sixteen)?;
    write_mask_png(&dir.join("fg.png"), &sample.foreground, Depth::Eight)?;
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(meta)? + "\n").map_err(|e| CliError::from_io(&path, e))
}

/// Reads a sample directory. Offsets are rebuilt from the stored images so
/// the definitional identities hold exactly; the stored raw offsets must
/// agree within [`STORED_OFFSET_TOLERANCE`].
pub fn read_sample_dir(dir: &Path) -> Result<(TrainingSample, Option<SampleMeta>)> {
    let ctx = |e: CliError| e.context(format!("sample {}", dir.display()));
    let fg = read_mask(&dir.join("fg.png")).map_err(ctx)?.binarize(0.5);
    let src = read_rgb(&dir.join("src.png")).map_err(ctx)?;
    let dlt = read_rgb(&dir.join("dlt.png")).map_err(ctx)?;
    let soft = read_rgb(&dir.join("soft.png")).map_err(ctx)?;
    let w = read_mask(&dir.join("w.png")).map_err(ctx)?;
    let sample = TrainingSample::from_parts(&src, &dlt, &soft, &w, &fg).map_err(|e| ctx(e.into()))?;
    for (name, rebuilt) in [("off.rawf", &sample.off), ("soft_off.rawf", &sample.soft_off)] {
        let stored = read_rawf(&dir.join(name), ValueRange::Offset).map_err(ctx)?;
        if stored.dims() != rebuilt.dims()
            || stored
                .data()
                .iter()
                .zip(rebuilt.data())
                .any(|(a, b)| (a - b).abs() > STORED_OFFSET_TOLERANCE)
        {
            return Err(ctx(CliError::invariant(format!("{name} disagrees with the stored images"))));
        }
    }
    let meta_path = dir.join("meta.json");
    let meta = match fs::read_to_string(&meta_path) {
        Ok(t) => Some(serde_json::from_str(&t).map_err(|e| ctx(CliError::bad_input(e.to_string())))?),
        Err(_) => None,
    };
    Ok((sample, meta))
}

/// Synthesizes `per_capture` samples of every capture into
/// `out/samples/<id>/` and returns a manifest listing them.
pub fn synthesize_to_dir(manifest: &Manifest, synth: &SynthConfig, per_capture: usize, out: &Path) -> Result<Manifest> {
    synth.validate()?;
    let mut samples = Vec::new();
    for entry in &manifest.captures {
        let cap = manifest.load_capture(entry)?;
        let ctx = SynthesisContext::prepare(&cap).map_err(|e| CliError::from(e).context(&entry.id))?;
        for index in 0..per_capture as u64 {
            let (sample, meta) = ctx.sample(synth, index).map_err(|e| CliError::from(e).context(&entry.id))?;
            let id = sample_id(&entry.id, index);
            let rel = PathBuf::from("samples").join(&id);
            write_sample_dir(&out.join(&rel), &sample, &meta)?;
            samples.push(SampleEntry {
                id,
                dir: rel,
                split: entry.split,
            });
        }
    }
    Ok(Manifest {
        version: MANIFEST_VERSION,
        captures: Vec::new(),
        samples,
        base: out.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use delight_core::fixtures::small_capture;

    #[test]
    fn capture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (cap, _) = small_capture(24, 3, 1).unwrap();
        let entry = write_capture(&dir.path().join("c0"), dir.path(), &cap).unwrap();
        let m = Manifest {
            captures: vec![entry],
            ..Manifest::default()
        };
        let mp = dir.path().join("manifest.json");
        m.save(&mp).unwrap();
        let loaded = Manifest::load(&mp).unwrap();
        assert!(loaded.captures[0].room_path.is_relative());
        let back = loaded.load_capture(&loaded.captures[0]).unwrap();
        assert_eq!(back.foreground, cap.foreground);
        assert_eq!(back.flash_images.len(), 3);
        for (a, b) in back.room_image.data().iter().zip(cap.room_image.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn sample_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (cap, _) = small_capture(24, 4, 2).unwrap();
        let (s, meta) = synthesize(&cap, &SynthConfig::scaled_to(24), 1).unwrap().remove(0);
        write_sample_dir(dir.path(), &s, &meta).unwrap();
        let (back, m) = read_sample_dir(dir.path()).unwrap();
        back.validate().unwrap();
        assert_eq!(m.unwrap(), meta);
        assert_eq!(back.foreground, s.foreground);
        for (a, b) in back.src.data().iter().zip(s.src.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn synthesized_dir_matches_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let (cap, _) = small_capture(24, 4, 3).unwrap();
        let entry = write_capture(&dir.path().join("c"), dir.path(), &cap).unwrap();
        let m = Manifest {
            captures: vec![entry],
            base: dir.path().to_path_buf(),
            ..Manifest::default()
        };
        let cfg = SynthConfig::scaled_to(24);
        let out = dir.path().join("out");
        let sm = synthesize_to_dir(&m, &cfg, 2, &out).unwrap();
        sm.save(&out.join("manifest.json")).unwrap();
        let from_disk = Manifest::load(&out.join("manifest.json")).unwrap().examples(&cfg, 2).unwrap();
        let in_mem = m.examples(&cfg, 2).unwrap();
        assert_eq!(from_disk.len(), 2);
        for ((a, sa), (b, sb)) in from_disk.iter().zip(&in_mem) {
            assert_eq!(a.id, b.id);
            assert_eq!(sa, sb);
            for (x, y) in a.sample.src.data().iter().zip(b.sample.src.data()) {
                assert!((x - y).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn unknown_manifest_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, r#"{"version":1,"captures":[],"extra":3}"#).unwrap();
        assert_eq!(Manifest::load(&p).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn validation_split_is_about_a_tenth() {
        let n = (0..2000).filter(|i| is_validation(&format!("sample-{i}"))).count();
        assert!((120..=280).contains(&n), "{n}");
    }
}
