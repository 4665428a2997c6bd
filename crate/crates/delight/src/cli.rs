//! Command-line front end. Every subcommand writes a `run.json` with its
//! effective configuration next to its outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use delight_core::datasynth::{build_hf_mask, SynthConfig};
use delight_core::fixtures::{render_olat_capture, FixtureScene, LightRig};
use delight_core::losses::LossSwitches;
use delight_core::nn::ModelConfig;
use delight_core::trainer::{AugmentConfig, Example};
use delight_core::MaskImage;
use serde_json::json;

use crate::checkpoint::ExtractorSpec;
use crate::config::{config_hash, write_run_record, RunConfig, SEED_ENV};
use crate::dataset::{write_capture, Manifest, Split, MANIFEST_VERSION};
use crate::error::{CliError, Result};
use crate::evaluate::{evaluate, load_inputs, Predictor, SplitFilter};
use crate::fit::{fit, FitOptions};
use crate::io::{read_mask, read_rgb, write_mask_png, write_png, Depth};

#[derive(Debug, Parser)]
#[command(name = "delight", version, about = "Portrait delighting: fixtures, data synthesis, training, inference and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file (unknown keys are rejected).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config file.
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic one-light-at-a-time captures and a manifest.
    Fixtures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subjects: Option<usize>,
        /// Image side in pixels.
        #[arg(long)]
        size: Option<usize>,
        /// Flash lights on the ring.
        #[arg(long)]
        lights: Option<usize>,
        /// Add a specular highlight to the room image.
        #[arg(long)]
        highlight: bool,
    },
    /// Synthesize training samples from the captures of a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_capture: Option<usize>,
        /// Scale the 480 px synthesis radii to the capture size.
        #[arg(long)]
        scaled: bool,
    },
    /// Train the network.
    Train(TrainArgs),
    /// De-light one image with a checkpoint.
    Delight {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Foreground mask; the background is blacked out.
        #[arg(long)]
        fg: Option<PathBuf>,
        /// Also run the offset decoder and write its output here.
        #[arg(long)]
        emit_offset: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
        #[arg(long)]
        per_capture: Option<usize>,
        #[arg(long)]
        scaled: bool,
    },
    /// Build the high-frequency weight mask of a source / de-lit pair.
    MakeMask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        dlt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fg: Option<PathBuf>,
        /// Scale the 480 px mask parameters to the image size.
        #[arg(long)]
        scaled: bool,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Model depth; widths double from `--base`.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub base: usize,
    /// Loss terms to switch off.
    #[arg(long, value_enum, value_delimiter = ',', conflicts_with = "ablation_row")]
    pub ablate: Vec<Term>,
    /// Cumulative ablation row: A, B, C or D.
    #[arg(long)]
    pub ablation_row: Option<char>,
    /// Alternate source and soft-shadow passes between steps.
    #[arg(long)]
    pub soft_alternate: bool,
    #[arg(long)]
    pub no_augment: bool,
    /// Scale the 480 px synthesis radii and crop bounds to the data size.
    #[arg(long)]
    pub scaled: bool,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub per_capture: Option<usize>,
    /// VGG-16 safetensors weights for the perceptual losses.
    #[arg(long)]
    pub vgg16: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Term {
    Off,
    Soft,
    Msk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

impl SplitArg {
    fn filter(self) -> SplitFilter {
        match self {
            SplitArg::All => SplitFilter::All,
            SplitArg::Train => SplitFilter::Only(Split::Train),
            SplitArg::Val => SplitFilter::Only(Split::Val),
            SplitArg::Test => SplitFilter::Only(Split::Test),
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut c = RunConfig::load(common.config.as_deref())?;
    // clap already folds the environment variable into `seed`.
    c.resolve_seed(common.seed, None)?;
    c.validate()?;
    Ok(c)
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn scaled_synth(c: &RunConfig, size: usize) -> SynthConfig {
    SynthConfig::scaled_to(size).with_seed(c.synth.rng_seed)
}

fn capture_size(m: &Manifest) -> Result<Option<usize>> {
    match m.captures.first() {
        None => Ok(None),
        Some(e) => {
            let img = read_rgb(&m.resolve(&e.room_path))?;
            Ok(Some(img.height().min(img.width())))
        }
    }
}

fn run_fixtures(common: &Common, out: &Path, subjects: Option<usize>, size: Option<usize>, lights: Option<usize>, highlight: bool) -> Result<()> {
    let mut c = load_config(common)?;
    c.data.subjects = subjects.unwrap_or(c.data.subjects);
    c.data.size = size.unwrap_or(c.data.size);
    c.data.lights = lights.unwrap_or(c.data.lights);
    c.validate()?;
    let base = c.seed.unwrap_or(0);
    let mut captures = Vec::new();
    for k in 0..c.data.subjects as u64 {
        let mut scene = FixtureScene::portrait(c.data.size, c.data.size).with_rig(LightRig::Ring {
            count: c.data.lights,
            cone_deg: 45.0,
            intensity: 1.0,
        });
        if highlight {
            scene = scene.with_highlight();
        }
        let (cap, truth) = render_olat_capture(&scene, base + k)?;
        let dir = out.join("captures").join(&cap.id);
        captures.push(write_capture(&dir, out, &cap)?);
        write_png(&dir.join("truth_uniform.png"), &truth.uniform, Depth::Sixteen)?;
        write_png(&dir.join("truth_albedo.png"), &truth.albedo, Depth::Sixteen)?;
    }
    let m = Manifest {
        version: MANIFEST_VERSION,
        captures,
        samples: Vec::new(),
        base: out.to_path_buf(),
    };
    m.save(&out.join("manifest.json"))?;
    write_run_record(out, "fixtures", &c, json!({ "highlight": highlight }))
}

fn run_synth(common: &Common, manifest: &Path, out: &Path, per_capture: Option<usize>, scaled: bool) -> Result<()> {
    let mut c = load_config(common)?;
    c.data.samples_per_capture = per_capture.unwrap_or(c.data.samples_per_capture);
    let m = Manifest::load(manifest)?;
    if scaled {
        if let Some(s) = capture_size(&m)? {
            c.synth = scaled_synth(&c, s);
        }
    }
    c.validate()?;
    let sm = crate::dataset::synthesize_to_dir(&m, &c.synth, c.data.samples_per_capture, out)?;
    sm.save(&out.join("manifest.json"))?;
    write_run_record(out, "synth", &c, json!({ "manifest": manifest }))
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let mut c = load_config(&a.common)?;
    let t = &mut c.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.learning_rate = a.lr.unwrap_or(t.learning_rate);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.resolution = a.resolution.unwrap_or(t.resolution);
    t.soft_alternate |= a.soft_alternate;
    if let Some(row) = a.ablation_row {
        t.switches = LossSwitches::ablation_row(row)
            .ok_or_else(|| CliError::bad_input(format!("unknown ablation row `{row}` (expected A, B, C or D)")))?;
    }
    for term in &a.ablate {
        match term {
            Term::Off => t.switches.off = false,
            Term::Soft => t.switches.soft = false,
            Term::Msk => t.switches.msk = false,
        }
    }
    if let Some(d) = a.depth {
        c.model = ModelConfig::scaled(d, a.base, c.model.seed);
    }
    if let Some(w) = &a.vgg16 {
        c.extractor = ExtractorSpec::Vgg16 { weights: w.clone() };
    }
    c.checkpoint_every = a.checkpoint_every.or(c.checkpoint_every);
    c.data.samples_per_capture = a.per_capture.unwrap_or(c.data.samples_per_capture);
    let m = Manifest::load(&a.manifest)?;
    if a.scaled {
        if let Some(s) = capture_size(&m)? {
            c.synth = scaled_synth(&c, s);
        }
    }
    let all = m.examples(&c.synth, c.data.samples_per_capture)?;
    if a.no_augment {
        c.train.augment = AugmentConfig::NONE;
    } else if a.scaled {
        if let Some(side) = all.iter().map(|(e, _)| e.sample.height().min(e.sample.width())).min() {
            c.train.augment = AugmentConfig::scaled_to(side);
        }
    }
    c.validate()?;
    let (train, val): (Vec<(Example, Split)>, Vec<(Example, Split)>) = all.into_iter().partition(|(_, s)| *s == Split::Train);
    let train: Vec<Example> = train.into_iter().map(|(e, _)| e).collect();
    let val: Vec<Example> = val.into_iter().filter(|(_, s)| *s == Split::Val).map(|(e, _)| e).collect();
    write_run_record(
        &a.out,
        "train",
        &c,
        json!({ "manifest": a.manifest, "resume": a.resume, "max_steps": a.max_steps, "train_samples": train.len(), "val_samples": val.len() }),
    )?;
    let opts = FitOptions {
        extractor: c.extractor.clone(),
        checkpoint_every: c.checkpoint_every,
        max_steps: a.max_steps,
        resume: a.resume.clone(),
    };
    let outcome = fit(&c.model, &c.train, &train, &val, &a.out, &opts)?;
    if let Some(last) = outcome.log.iter().rev().find(|e| e.kind == "train") {
        println!("step {} loss {:.6}", last.step, last.loss.total);
    }
    Ok(())
}

fn run_delight(ckpt: &Path, input: &Path, out: &Path, fg: Option<&Path>, emit_offset: Option<&Path>) -> Result<()> {
    let p = Predictor::load(ckpt)?;
    let img = read_rgb(input)?;
    let mask: Option<MaskImage> = fg.map(read_mask).transpose()?.map(|m| m.binarize(0.5));
    if let Some(m) = &mask {
        if (m.height(), m.width()) != (img.height(), img.width()) {
            return Err(CliError::bad_input("foreground mask size differs from the input image"));
        }
    }
    let (dlt, off) = p.run(&img, mask.as_ref(), emit_offset.is_some())?;
    write_png(out, &dlt, Depth::Eight)?;
    if let (Some(path), Some(off)) = (emit_offset, off) {
        write_png(path, &off, Depth::Eight)?;
    }
    let c = RunConfig::default();
    write_run_record(
        &parent_dir(out),
        "delight",
        &c,
        json!({ "ckpt": ckpt, "input": input, "out": out, "fg": fg, "emit_offset": emit_offset }),
    )
}

#[allow(clippy::too_many_arguments)]
fn run_eval(common: &Common, ckpt: &Path, manifest: &Path, out: &Path, split: SplitArg, per_capture: Option<usize>, scaled: bool) -> Result<()> {
    let mut c = load_config(common)?;
    c.data.samples_per_capture = per_capture.unwrap_or(c.data.samples_per_capture);
    let ck = crate::checkpoint::Checkpoint::load(ckpt)?;
    let hash = config_hash(&ck.header)?;
    let predictor = Predictor::from_checkpoint(ck)?;
    let m = Manifest::load(manifest)?;
    if scaled {
        if let Some(s) = capture_size(&m)? {
            c.synth = scaled_synth(&c, s);
        }
    }
    let inputs = load_inputs(&m, split.filter(), &c.synth, c.data.samples_per_capture)?;
    if inputs.is_empty() {
        return Err(CliError::bad_input("no samples in the selected split"));
    }
    let report = evaluate(&predictor, &inputs, out, hash, None)?;
    write_run_record(out, "eval", &c, json!({ "ckpt": ckpt, "manifest": manifest, "split": format!("{split:?}").to_lowercase() }))?;
    let a = &report.aggregate;
    println!(
        "{} images: rmse {:?} ssim {:?} li_ssim {:?}",
        a.count, a.rmse, a.ssim, a.li_ssim
    );
    Ok(())
}

fn run_make_mask(common: &Common, src: &Path, dlt: &Path, out: &Path, fg: Option<&Path>, scaled: bool) -> Result<()> {
    let mut c = load_config(common)?;
    let s = read_rgb(src)?;
    let d = read_rgb(dlt)?;
    if scaled {
        c.synth = scaled_synth(&c, s.height().min(s.width()));
    }
    let mask = match fg {
        Some(p) => read_mask(p)?.binarize(0.5),
        None => MaskImage::from_fn(s.height(), s.width(), |_, _| 1.0)?,
    };
    let w = build_hf_mask(&s, &d, &mask, &c.synth.hf_mask, c.synth.guided_eps)?;
    write_mask_png(out, &w, Depth::Eight)?;
    write_run_record(&parent_dir(out), "make-mask", &c, json!({ "src": src, "dlt": dlt, "fg": fg, "out": out }))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fixtures {
            common,
            out,
            subjects,
            size,
            lights,
            highlight,
        } => run_fixtures(common, out, *subjects, *size, *lights, *highlight),
        Command::Synth {
            common,
            manifest,
            out,
            per_capture,
            scaled,
        } => run_synth(common, manifest, out, *per_capture, *scaled),
        Command::Train(a) => run_train(a),
        Command::Delight {
            ckpt,
            input,
            out,
            fg,
            emit_offset,
        } => run_delight(ckpt, input, out, fg.as_deref(), emit_offset.as_deref()),
        Command::Eval {
            common,
            ckpt,
            manifest,
            out,
            split,
            per_capture,
            scaled,
        } => run_eval(common, ckpt, manifest, out, *split, *per_capture, *scaled),
        Command::MakeMask {
            common,
            src,
            dlt,
            out,
            fg,
            scaled,
        } => run_make_mask(common, src, dlt, out, fg.as_deref(), *scaled),
    }
}

/// Parses `args` and runs; returns the process exit code. Usage errors
/// count as bad input (3).
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
