//! Binary training checkpoints and feature-extractor weights.
//!
//! Checkpoint layout: 8-byte magic, `u64` LE header length, JSON header,
//! `u64` LE parameter count, then parameters, Adam first moments and Adam
//! second moments as `f32` LE, and finally the SHA-256 of everything before it.

use std::fs;
use std::path::{Path, PathBuf};

use delight_core::nn::{Adam, DelightModel, ExtractorConfig, FeatureExtractor, ModelConfig};
use delight_core::trainer::{TrainConfig, Trainer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"DLCKPT01";

/// Which frozen feature extractor the losses use.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorSpec {
    /// Small seeded network; no external weights.
    #[default]
    Miniature,
    /// VGG-16 trunk loaded from a safetensors file with torchvision names.
    Vgg16 { weights: PathBuf },
}

/// torchvision `features.N` indices of VGG-16's thirteen convolutions.
pub const VGG16_CONV_INDICES: [usize; 13] = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28];

pub fn load_extractor(spec: &ExtractorSpec) -> Result<FeatureExtractor<f32>> {
    match spec {
        ExtractorSpec::Miniature => Ok(FeatureExtractor::miniature()),
        ExtractorSpec::Vgg16 { weights } => load_vgg16(weights),
    }
}

pub fn load_vgg16(path: &Path) -> Result<FeatureExtractor<f32>> {
    let bytes = fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    let st = safetensors::SafeTensors::deserialize(&bytes)
        .map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))?;
    let read = |name: &str| -> Result<Vec<f32>> {
        let t = st
            .tensor(name)
            .map_err(|e| CliError::bad_input(format!("{}: {name}: {e}", path.display())))?;
        if t.dtype() != safetensors::Dtype::F32 {
            return Err(CliError::bad_input(format!("{name}: expected f32 weights, got {:?}", t.dtype())));
        }
        Ok(t.data()
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    };
    let weights = VGG16_CONV_INDICES
        .iter()
        .map(|i| Ok((read(&format!("features.{i}.weight"))?, read(&format!("features.{i}.bias"))?)))
        .collect::<Result<Vec<_>>>()?;
    FeatureExtractor::from_weights(ExtractorConfig::vgg16(), weights).map_err(|e| CliError::bad_input(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub extractor: ExtractorSpec,
    /// Epoch and batch index of the next step to run.
    pub epoch: usize,
    pub batch: usize,
    pub step: u64,
    pub best_val: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f32>,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
}

fn push_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer<f32>, extractor: &ExtractorSpec, epoch: usize, batch: usize, best_val: Option<f64>) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                model: t.model.config().clone(),
                train: t.config.clone(),
                extractor: extractor.clone(),
                epoch,
                batch,
                step: t.adam.step,
                best_val,
            },
            params: t.params.clone(),
            adam_m: t.adam.m.clone(),
            adam_v: t.adam.v.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n = self.params.len();
        let mut out = Vec::with_capacity(48 + header.len() + 12 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        push_f32s(&mut out, &self.params);
        push_f32s(&mut out, &self.adam_m);
        push_f32s(&mut out, &self.adam_v);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| CliError::bad_input(format!("corrupt checkpoint: {m}"));
        if bytes.len() < MAGIC.len() + 16 + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let u64_at = |i: usize| -> Result<u64> {
            body.get(i..i + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| corrupt("truncated"))
        };
        let hlen = u64_at(8)? as usize;
        let hend = 16usize.checked_add(hlen).ok_or_else(|| corrupt("header length"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body.get(16..hend).ok_or_else(|| corrupt("truncated header"))?)
                .map_err(|e| corrupt(&e.to_string()))?;
        let n = u64_at(hend)? as usize;
        let start = hend + 8;
        if body.len() != start + 12 * n {
            return Err(corrupt("array sizes do not match"));
        }
        let arr = |k: usize| -> Vec<f32> {
            body[start + 4 * n * k..start + 4 * n * (k + 1)]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect()
        };
        Ok(Checkpoint {
            header,
            params: arr(0),
            adam_m: arr(1),
            adam_v: arr(2),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, bytes).map_err(|e| CliError::from_io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CliError::from_io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::from_io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display()))
    }

    pub fn model(&self) -> Result<DelightModel> {
        let m = DelightModel::new(self.header.model.clone())?;
        if m.param_count() != self.params.len() {
            return Err(CliError::bad_input("checkpoint parameter count does not match its model config"));
        }
        Ok(m)
    }

    /// Rebuilds the trainer with its optimizer state.
    pub fn into_trainer(self, extractor: FeatureExtractor<f32>) -> Result<Trainer<f32>> {
        let model = self.model()?;
        let mut t = Trainer::new(model, extractor, self.header.train.clone())?;
        t.params = self.params;
        t.adam = Adam {
            config: t.config.adam(),
            step: self.header.step,
            m: self.adam_m,
            v: self.adam_v,
        };
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = DelightModel::new(ModelConfig::scaled(2, 4, 1)).unwrap();
        let mut t = Trainer::new(model, FeatureExtractor::miniature(), TrainConfig::default()).unwrap();
        t.adam.step = 7;
        t.adam.m[3] = 0.25;
        Checkpoint::from_trainer(&t, &ExtractorSpec::Miniature, 1, 2, Some(0.5))
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        let t = back.into_trainer(FeatureExtractor::miniature()).unwrap();
        assert_eq!(t.adam.step, 7);
        assert_eq!(t.adam.m[3], 0.25);
    }

    #[test]
    fn corruption_is_refused() {
        let mut bytes = sample().to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        let e = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(e.message.contains("checksum"));
        assert!(Checkpoint::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn vgg16_loader_reads_torchvision_names() {
        use safetensors::tensor::TensorView;
        let shapes = ExtractorConfig::vgg16().conv_shapes();
        let mut bufs = Vec::new();
        for (k, (cin, cout)) in shapes.iter().enumerate() {
            let w: Vec<u8> = (0..cout * cin * 9).flat_map(|i| ((i % 7) as f32 * 0.01 * (k + 1) as f32).to_le_bytes()).collect();
            let b: Vec<u8> = (0..*cout).flat_map(|i| (i as f32 * 0.001).to_le_bytes()).collect();
            bufs.push((VGG16_CONV_INDICES[k], *cin, *cout, w, b));
        }
        let mut views = Vec::new();
        for (i, cin, cout, w, b) in &bufs {
            views.push((
                format!("features.{i}.weight"),
                TensorView::new(safetensors::Dtype::F32, vec![*cout, *cin, 3, 3], w).unwrap(),
            ));
            views.push((format!("features.{i}.bias"), TensorView::new(safetensors::Dtype::F32, vec![*cout], b).unwrap()));
        }
        let bytes = safetensors::serialize(views, &None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vgg.safetensors");
        fs::write(&p, bytes).unwrap();
        let ext = load_vgg16(&p).unwrap();
        assert_eq!(ext.stage_count(), 5);
        assert_eq!(load_vgg16(&dir.path().join("none")).unwrap_err().exit_code(), 2);
    }
}
