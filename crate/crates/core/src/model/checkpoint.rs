//! Versioned checkpoint container.
//!
//! JSON with parameter tensors stored as `name -> (shape, row-major f64)`;
//! serde_json prints doubles with shortest round-trip precision, so values
//! survive save/load bit-exactly. The model config, init seed, optimizer
//! step and momenta, and the preprocessing statistics needed at inference
//! all travel together, which is enough state for an exact resume.

use crate::dataio::{DatasetStats, PreprocessConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::rng::RNG_ALGORITHM;
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub rng_algorithm: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub params: Vec<TensorEntry>,
    #[serde(default)]
    pub momentum: Vec<TensorEntry>,
    #[serde(default)]
    pub preprocess: Option<PreprocessConfig>,
    #[serde(default)]
    pub stats: Option<DatasetStats>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, seed: u64, step: u64) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            config: params.config.clone(),
            seed,
            step,
            params: params
                .set
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            momentum: Vec::new(),
            preprocess: None,
            stats: None,
        }
    }

    /// Rebuild the parameter set: initialize from the stored config/seed,
    /// then overwrite every tensor by name.
    pub fn to_params(&self) -> Result<ModelParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut params = ModelParams::init(&self.config, self.seed)?;
        if self.params.len() != params.set.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                params.set.len()
            )));
        }
        for entry in &self.params {
            let t = Tensor::new(entry.shape.clone(), entry.data.clone())?;
            params.set.set_by_name(&entry.name, t)?;
        }
        Ok(params)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(ckpt)
        .map_err(|e| Error::Config(format!("checkpoint serialization failed: {e}")))?;
    crate::dataio::csv::write_atomic(path, json.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad checkpoint {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use tempfile::TempDir;

    #[test]
    fn save_load_round_trip_is_exact() {
        let cfg = ModelConfig {
            joints: 4,
            frames: 5,
            accel_tokens: 5,
            classes: 3,
            d_spatial: 8,
            d_model: 16,
            heads: 2,
            depth_spatial: 1,
            depth_temporal: 2,
            depth_accel: 2,
            ..ModelConfig::defaults(Variant::CrossViewFusion)
        };
        let params = ModelParams::init(&cfg, 77).unwrap();
        let ckpt = Checkpoint::from_params(&params, 77, 123);
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let restored = load_checkpoint(&path).unwrap();
        assert_eq!(restored.step, 123);
        assert_eq!(restored.rng_algorithm, RNG_ALGORITHM);
        let params2 = restored.to_params().unwrap();
        for (i, (name, t)) in params.set.iter().enumerate() {
            assert_eq!(params2.set.name(i), name);
            assert_eq!(params2.set.tensor(i).data(), t.data(), "{name}");
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let cfg = ModelConfig {
            joints: 2,
            frames: 3,
            accel_tokens: 3,
            d_spatial: 4,
            d_model: 8,
            heads: 2,
            depth_spatial: 1,
            depth_temporal: 1,
            depth_accel: 1,
            classes: 2,
            ..ModelConfig::defaults(Variant::Accel)
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let mut ckpt = Checkpoint::from_params(&params, 1, 0);
        ckpt.version = 99;
        assert!(ckpt.to_params().is_err());
    }
}
