//! Layered run configuration: flags, then `DELIGHT_SEED`, then a TOML file,
//! then built-in defaults.

use std::fs;
use std::path::Path;

use delight_core::datasynth::SynthConfig;
use delight_core::nn::ModelConfig;
use delight_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::ExtractorSpec;
use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "DELIGHT_SEED";

/// Fixture rendering and per-capture synthesis counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub subjects: usize,
    pub size: usize,
    pub lights: usize,
    pub samples_per_capture: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            subjects: 4,
            size: 480,
            lights: 18,
            samples_per_capture: 8,
        }
    }
}

/// Everything a run can be configured with. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the seeds of every section when set.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub extractor: ExtractorSpec,
    /// Extra checkpoint every this many optimizer steps.
    pub checkpoint_every: Option<u64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| CliError::bad_input(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::from_io(p, e))?;
                Self::from_toml(&text).map_err(|e| e.context(p.display()))
            }
        }
    }

    /// Applies the seed precedence: flag, then environment, then file.
    pub fn resolve_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<()> {
        let env = env
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::bad_input(format!("{SEED_ENV}={s:?} is not an unsigned integer")))
            })
            .transpose()?;
        self.seed = flag.or(env).or(self.seed);
        if let Some(s) = self.seed {
            self.model.seed = s;
            self.train.seed = s;
            self.synth.rng_seed = s;
        }
        Ok(())
    }

    pub fn seed_from_env(&mut self, flag: Option<u64>) -> Result<()> {
        let env = std::env::var(SEED_ENV).ok();
        self.resolve_seed(flag, env.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.subjects == 0 || d.size == 0 || d.lights < 2 || d.samples_per_capture == 0 {
            return Err(CliError::bad_input("data: subjects, size and samples must be positive and lights at least 2"));
        }
        Ok(())
    }
}

/// Hex SHA-256 of a value's canonical JSON.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// The per-invocation audit record written as `run.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord<'a> {
    pub tool_version: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub config_hash: String,
    pub inputs: serde_json::Value,
}

pub fn write_run_record(dir: &Path, command: &str, config: &RunConfig, inputs: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::from_io(dir, e))?;
    let rec = RunRecord {
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        config_hash: config_hash(config)?,
        inputs,
    };
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&rec)? + "\n").map_err(|e| CliError::from_io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_fill_defaults() {
        let c = RunConfig::from_toml("[train]\nepochs = 2\n[model]\ndepth = 3\nwidths = [8, 16, 32]\n").unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.learning_rate, 2e-4);
        assert_eq!(c.model.widths, vec![8, 16, 32]);
        assert_eq!(c.extractor, ExtractorSpec::Miniature);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert_eq!(RunConfig::from_toml("bogus = 1").unwrap_err().exit_code(), 3);
        assert!(RunConfig::from_toml("[train]\nlr = 1.0").is_err());
    }

    #[test]
    fn seed_precedence() {
        let mut c = RunConfig::from_toml("seed = 5").unwrap();
        c.resolve_seed(None, None).unwrap();
        assert_eq!(c.train.seed, 5);
        c.resolve_seed(None, Some("7")).unwrap();
        assert_eq!((c.train.seed, c.synth.rng_seed, c.model.seed), (7, 7, 7));
        c.resolve_seed(Some(9), Some("7")).unwrap();
        assert_eq!(c.train.seed, 9);
        assert!(c.resolve_seed(None, Some("x")).is_err());
    }

    #[test]
    fn extractor_table_parses() {
        let c = RunConfig::from_toml("[extractor]\nkind = \"vgg16\"\nweights = \"w.safetensors\"").unwrap();
        assert!(matches!(c.extractor, ExtractorSpec::Vgg16 { .. }));
    }
}
