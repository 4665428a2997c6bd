//! Epoch loop around `Trainer`: checkpoints, best-by-validation, loss log,
//! and exact resume.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use delight_core::losses::LossBreakdown;
use delight_core::nn::{DelightModel, ModelConfig};
use delight_core::trainer::{epoch_batches, prepare_batch, AugmentConfig, Example, TrainConfig, Trainer};
use delight_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_extractor, Checkpoint, ExtractorSpec};
use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub extractor: ExtractorSpec,
    /// Extra checkpoint every this many optimizer steps.
    pub checkpoint_every: Option<u64>,
    /// Stop (with a checkpoint) once this many optimizer steps have run in total.
    pub max_steps: Option<u64>,
    pub resume: Option<PathBuf>,
}

/// One line of `losses.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// `train` for an optimizer step, `val` for an end-of-epoch evaluation.
    pub kind: String,
    pub epoch: usize,
    pub batch: usize,
    /// Optimizer steps taken after this entry.
    pub step: u64,
    pub ids: Vec<String>,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Serialize)]
struct RunLayout<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    extractor: &'a ExtractorSpec,
    train_samples: usize,
    val_samples: usize,
}

pub struct FitOutcome {
    pub trainer: Trainer<f32>,
    pub log: Vec<LogEntry>,
    pub best_val: Option<f64>,
    pub finished: bool,
}

pub fn step_checkpoint(out: &Path, step: u64) -> PathBuf {
    out.join(format!("step-{step}.ckpt"))
}

pub fn best_checkpoint(out: &Path) -> PathBuf {
    out.join("best.ckpt")
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CliError::from))
        .collect()
}

struct LossLog {
    file: BufWriter<File>,
    entries: Vec<LogEntry>,
}

impl LossLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| CliError::from_io(path, e))?;
        Ok(LossLog {
            file: BufWriter::new(file),
            entries: Vec::new(),
        })
    }

    fn push(&mut self, e: LogEntry) -> Result<()> {
        let line = serde_json::to_string(&e)?;
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|err| CliError::other(format!("loss log: {err}")))?;
        self.entries.push(e);
        Ok(())
    }
}

/// Writes the offending step to `nonfinite.json` and turns the error into
/// an invariant failure naming the sample.
fn dump_nonfinite(out: &Path, step: u64, ids: &[String], e: CoreError) -> CliError {
    if let CoreError::NonFinite { sample, detail } = &e {
        let dump = serde_json::json!({ "step": step, "batch_ids": ids, "sample": sample, "detail": detail });
        let _ = fs::write(out.join("nonfinite.json"), dump.to_string() + "\n");
    }
    CliError::invariant(format!("step {step}: {e}"))
}

fn save(t: &Trainer<f32>, extractor: &ExtractorSpec, pos: (usize, usize), best: Option<f64>, path: &Path) -> Result<()> {
    Checkpoint::from_trainer(t, extractor, pos.0, pos.1, best).save(path)
}

/// Trains on `train` (evaluating on `val` after every epoch), writing
/// `config.json`, `losses.jsonl`, `step-N.ckpt` and `best.ckpt` under `out`.
/// With `opts.resume` the model, optimizer state and position come from that
/// checkpoint and `model_config` / `train_config` are ignored.
pub fn fit(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train: &[Example],
    val: &[Example],
    out: &Path,
    opts: &FitOptions,
) -> Result<FitOutcome> {
    if train.is_empty() {
        return Err(CliError::bad_input("no training samples"));
    }
    fs::create_dir_all(out).map_err(|e| CliError::from_io(out, e))?;
    let extractor = load_extractor(&opts.extractor)?;
    let (mut trainer, mut pos, mut best) = match &opts.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.header.extractor != opts.extractor {
                return Err(CliError::bad_input("checkpoint was trained with a different feature extractor"));
            }
            let pos = (ck.header.epoch, ck.header.batch);
            let best = ck.header.best_val;
            (ck.into_trainer(extractor)?, pos, best)
        }
        None => {
            let model = DelightModel::new(model_config.clone())?;
            (Trainer::new(model, extractor, train_config.clone())?, (0, 0), None)
        }
    };
    let cfg = trainer.config.clone();
    let layout = RunLayout {
        model: trainer.model.config(),
        train: &cfg,
        extractor: &opts.extractor,
        train_samples: train.len(),
        val_samples: val.len(),
    };
    let cpath = out.join("config.json");
    fs::write(&cpath, serde_json::to_string_pretty(&layout)? + "\n").map_err(|e| CliError::from_io(&cpath, e))?;
    let mut log = LossLog::open(&out.join("losses.jsonl"), opts.resume.is_some())?;

    let val_cfg = TrainConfig {
        augment: AugmentConfig::NONE,
        ..cfg.clone()
    };
    let val_batch = if val.is_empty() {
        Vec::new()
    } else {
        prepare_batch::<f32>(val, &(0..val.len()).collect::<Vec<_>>(), 0, &val_cfg)?
    };

    while pos.0 < cfg.epochs {
        let epoch = pos.0;
        let batches = epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch);
        let mut epoch_sum = 0.0;
        for (b, idx) in batches.iter().enumerate().skip(pos.1) {
            if opts.max_steps.is_some_and(|m| trainer.step() >= m) {
                save(&trainer, &opts.extractor, (epoch, b), best, &step_checkpoint(out, trainer.step()))?;
                return Ok(FitOutcome {
                    trainer,
                    log: log.entries,
                    best_val: best,
                    finished: false,
                });
            }
            let batch = prepare_batch::<f32>(train, idx, epoch, &cfg)?;
            let ids: Vec<String> = batch.iter().map(|s| s.id.clone()).collect();
            let loss = trainer
                .train_step(&batch)
                .map_err(|e| dump_nonfinite(out, trainer.step(), &ids, e))?;
            epoch_sum += loss.total;
            log.push(LogEntry {
                kind: "train".into(),
                epoch,
                batch: b,
                step: trainer.step(),
                ids,
                loss,
            })?;
            let next = if b + 1 == batches.len() { (epoch + 1, 0) } else { (epoch, b + 1) };
            if opts.checkpoint_every.is_some_and(|k| k > 0 && trainer.step() % k == 0) && next.1 != 0 {
                save(&trainer, &opts.extractor, next, best, &step_checkpoint(out, trainer.step()))?;
            }
        }
        // Validation loss picks the best checkpoint; without a validation
        // split the mean training loss of the epoch stands in.
        let score = if val_batch.is_empty() {
            let steps = batches.len().saturating_sub(pos.1).max(1);
            epoch_sum / steps as f64
        } else {
            let v = trainer.eval_loss(&val_batch)?;
            log.push(LogEntry {
                kind: "val".into(),
                epoch,
                batch: batches.len(),
                step: trainer.step(),
                ids: val.iter().map(|e| e.id.clone()).collect(),
                loss: v,
            })?;
            v.total
        };
        pos = (epoch + 1, 0);
        let improved = best.is_none_or(|b| score < b);
        if improved {
            best = Some(score);
        }
        save(&trainer, &opts.extractor, pos, best, &step_checkpoint(out, trainer.step()))?;
        if improved {
            save(&trainer, &opts.extractor, pos, best, &best_checkpoint(out))?;
        }
    }
    Ok(FitOutcome {
        trainer,
        log: log.entries,
        best_val: best,
        finished: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use delight_core::datasynth::{synthesize, SynthConfig};
    use delight_core::fixtures::small_capture;

    fn examples(n: usize) -> Vec<Example> {
        let (cap, _) = small_capture(16, 4, 5).unwrap();
        synthesize(&cap, &SynthConfig::scaled_to(16), n)
            .unwrap()
            .into_iter()
            .map(|(sample, m)| Example {
                id: format!("s{}", m.index),
                sample,
            })
            .collect()
    }

    fn configs() -> (ModelConfig, TrainConfig) {
        let t = TrainConfig {
            epochs: 2,
            batch_size: 2,
            resolution: 16,
            learning_rate: 1e-3,
            augment: AugmentConfig::scaled_to(16),
            ..TrainConfig::default()
        };
        (ModelConfig::scaled(2, 4, 3), t)
    }

    #[test]
    fn writes_layout_and_resumes_exactly() {
        let ex = examples(5);
        let (m, t) = configs();
        let dir = tempfile::tempdir().unwrap();
        let full = dir.path().join("full");
        let a = fit(&m, &t, &ex[..4], &ex[4..], &full, &FitOptions::default()).unwrap();
        assert!(a.finished);
        for f in ["config.json", "losses.jsonl", "best.ckpt", "step-2.ckpt", "step-4.ckpt"] {
            assert!(full.join(f).exists(), "{f}");
        }
        let logged = read_log(&full.join("losses.jsonl")).unwrap();
        assert_eq!(logged, a.log);
        assert_eq!(logged.iter().filter(|e| e.kind == "val").count(), 2);

        let part = dir.path().join("part");
        let opts = FitOptions {
            max_steps: Some(3),
            ..FitOptions::default()
        };
        let b = fit(&m, &t, &ex[..4], &ex[4..], &part, &opts).unwrap();
        assert!(!b.finished);
        let resumed = FitOptions {
            resume: Some(part.join("step-3.ckpt")),
            ..FitOptions::default()
        };
        let c = fit(&m, &t, &ex[..4], &ex[4..], &part, &resumed).unwrap();
        assert!(c.finished);
        assert_eq!(c.trainer.params, a.trainer.params);
        let train_a: Vec<_> = a.log.iter().filter(|e| e.kind == "train").collect();
        let train_c: Vec<_> = c.log.iter().filter(|e| e.kind == "train").collect();
        assert_eq!(train_c[0], train_a[3]);
    }

    #[test]
    fn corrupt_checkpoint_refused() {
        let ex = examples(2);
        let (m, t) = configs();
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.ckpt");
        fs::write(&bad, b"not a checkpoint").unwrap();
        let opts = FitOptions {
            resume: Some(bad),
            ..FitOptions::default()
        };
        let e = fit(&m, &t, &ex, &[], dir.path(), &opts).err().unwrap();
        assert_eq!(e.exit_code(), 3);
    }
}
