use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use delight::io::{read_mask, read_rgb, write_png, Depth};
use delight_core::datasynth::{build_hf_mask, SynthConfig};
use delight_core::{MaskImage, RasterImage, ValueRange};

fn delight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delight"))
        .args(args)
        .env_remove("DELIGHT_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// fixtures -> synth -> train -> eval -> delight on a 16 px world.
fn pipeline(root: &Path) -> std::path::PathBuf {
    let fx = root.join("fx");
    ok(delight(&["fixtures", "--out", p(&fx), "--subjects", "2", "--size", "16", "--lights", "4", "--seed", "3"]));
    assert!(fx.join("manifest.json").exists() && fx.join("run.json").exists());

    let syn = root.join("syn");
    let man = fx.join("manifest.json");
    ok(delight(&["synth", "--manifest", p(&man), "--out", p(&syn), "--per-capture", "2", "--scaled", "--seed", "3"]));
    let smani = syn.join("manifest.json");
    assert!(smani.exists());

    let run = root.join("run");
    let args = [
        "train", "--manifest", p(&smani), "--out", p(&run), "--epochs", "2", "--resolution", "16", "--depth", "2", "--base", "4",
        "--batch-size", "2", "--scaled", "--seed", "3",
    ];
    ok(delight(&args));
    for f in ["best.ckpt", "losses.jsonl", "config.json", "run.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    run
}

#[test]
fn end_to_end_pipeline_and_reproducible_inference() {
    let dir = tempfile::tempdir().unwrap();
    let run = pipeline(dir.path());
    let ckpt = run.join("best.ckpt");

    let ev = dir.path().join("eval");
    let smani = dir.path().join("syn/manifest.json");
    ok(delight(&["eval", "--ckpt", p(&ckpt), "--manifest", p(&smani), "--out", p(&ev)]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["images"].as_array().unwrap().len(), 4);
    assert!(report["aggregate"]["rmse"].as_f64().unwrap().is_finite());

    let input = fs::read_dir(dir.path().join("syn/samples")).unwrap().find_map(|e| {
        let d = e.unwrap().path();
        d.join("src.png").exists().then(|| d.join("src.png"))
    });
    let input = input.expect("a sample directory");
    let (a, b) = (dir.path().join("out/a.png"), dir.path().join("out/b.png"));
    let off = dir.path().join("out/off.png");
    ok(delight(&["delight", "--ckpt", p(&ckpt), "--input", p(&input), "--out", p(&a), "--emit-offset", p(&off)]));
    ok(delight(&["delight", "--ckpt", p(&ckpt), "--input", p(&input), "--out", p(&b)]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(read_rgb(&a).unwrap().dims(), read_rgb(&input).unwrap().dims());
    assert!(off.exists());
    assert!(dir.path().join("out/run.json").exists());
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.png");
    write_png(&img, &RasterImage::filled(8, 8, 3, ValueRange::Unit, 0.5).unwrap(), Depth::Eight).unwrap();
    let out = dir.path().join("o.png");

    let missing = delight(&["delight", "--ckpt", p(&dir.path().join("none.ckpt")), "--input", p(&img), "--out", p(&out)]);
    assert_eq!(code(&missing), 2);
    assert!(!missing.stderr.is_empty());

    let bad = dir.path().join("bad.png");
    fs::write(&bad, b"not an image").unwrap();
    let r = delight(&["make-mask", "--src", p(&bad), "--dlt", p(&img), "--out", p(&out)]);
    assert_eq!(code(&r), 3);

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    let r = delight(&["fixtures", "--out", p(&dir.path().join("fx")), "--config", p(&cfg)]);
    assert_eq!(code(&r), 3);

    assert_eq!(code(&delight(&["no-such-command"])), 3);
}

fn make_mask(dir: &Path, src: &RasterImage, dlt: &RasterImage) -> MaskImage {
    let (s, d, m) = (dir.join("s.png"), dir.join("d.png"), dir.join("masks/m.png"));
    write_png(&s, src, Depth::Sixteen).unwrap();
    write_png(&d, dlt, Depth::Sixteen).unwrap();
    ok(delight(&["make-mask", "--src", p(&s), "--dlt", p(&d), "--out", p(&m), "--scaled"]));
    assert!(dir.join("masks/run.json").exists());
    read_mask(&m).unwrap()
}

#[test]
fn mask_of_smooth_pair_is_black() {
    let dir = tempfile::tempdir().unwrap();
    let src = RasterImage::from_fn(24, 24, 3, ValueRange::Unit, |_, _, c| 0.2 + 0.1 * c as f32).unwrap();
    let dlt = RasterImage::filled(24, 24, 3, ValueRange::Unit, 0.7).unwrap();
    let mask = make_mask(dir.path(), &src, &dlt);
    assert!(mask.data().iter().all(|v| *v == 0.0));
}

#[test]
fn mask_of_shadow_edge_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let dlt = RasterImage::filled(32, 32, 3, ValueRange::Unit, 0.6).unwrap();
    let src = RasterImage::from_fn(32, 32, 3, ValueRange::Unit, |_, x, _| 0.6 - 0.4 * (x.clamp(13, 16) - 13) as f32 / 3.0).unwrap();
    let mask = make_mask(dir.path(), &src, &dlt);
    let cfg = SynthConfig::scaled_to(32);
    let fg = MaskImage::from_fn(32, 32, |_, _| 1.0).unwrap();
    let want = build_hf_mask(&src, &dlt, &fg, &cfg.hf_mask, cfg.guided_eps).unwrap();
    assert!(want.data().iter().any(|v| *v > 0.1), "max {}", want.data().iter().cloned().fold(0.0, f32::max));
    for (a, b) in mask.data().iter().zip(want.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6, "{a} vs {b}");
    }
}

#[test]
fn seed_env_matches_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(delight(&["fixtures", "--out", p(&a), "--subjects", "1", "--size", "16", "--lights", "3", "--seed", "8"]));
    let o = Command::new(env!("CARGO_BIN_EXE_delight"))
        .args(["fixtures", "--out", p(&b), "--subjects", "1", "--size", "16", "--lights", "3"])
        .env("DELIGHT_SEED", "8")
        .output()
        .unwrap();
    ok(o);
    let files = |root: &Path| {
        let mut v: Vec<_> = fs::read_dir(root.join("captures"))
            .unwrap()
            .flat_map(|c| fs::read_dir(c.unwrap().path()).unwrap())
            .map(|f| {
                let f = f.unwrap().path();
                (f.file_name().unwrap().to_owned(), fs::read(&f).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(files(&a), files(&b));
}
