//! Versioned JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "mivat-checkpoint",
//!   "version": 1,
//!   "architecture": { "preset": "tremor-cnn" },
//!   "parameters": [ { "name": "attention.v", "shape": [128, 64], "values": [...] } ]
//! }
//! ```
//!
//! Values are stored as f64 regardless of the model's precision.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::ArchitectureSpec;
use super::mil::MilClassifier;
use super::ModelError;
use crate::autograd::{Real, Tensor};

pub const CHECKPOINT_FORMAT: &str = "mivat-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    architecture: ArchitectureSpec,
    parameters: Vec<StoredParam>,
}

impl<T: Real> MilClassifier<T> {
    pub fn to_checkpoint_json(&self) -> Result<String, ModelError> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: self.spec().clone(),
            parameters: self
                .params()
                .iter()
                .map(|p| StoredParam {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, ModelError> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "not a checkpoint (format `{}`)",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {} (this build reads {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        let mut stored: HashMap<String, StoredParam> = ckpt
            .parameters
            .into_iter()
            .map(|p| (p.name.clone(), p))
            .collect();
        let mut model = MilClassifier::new(&ckpt.architecture, &mut ChaCha8Rng::seed_from_u64(0))?;
        let expected = model.params().len();
        let mut bad_values = None;
        model.load_values(|name| {
            let p = stored.remove(name)?;
            match Tensor::from_f64(&p.shape, &p.values) {
                Ok(t) => Some(t),
                Err(e) => {
                    bad_values = Some(format!("parameter {name}: {e}"));
                    None
                }
            }
        })
        .map_err(|e| bad_values.take().map(ModelError::Checkpoint).unwrap_or(e))?;
        if let Some(extra) = stored.keys().next() {
            return Err(ModelError::Checkpoint(format!(
                "unexpected parameter {extra} (architecture has {expected})"
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_checkpoint_json(&fs::read_to_string(path)?)
    }
}
