//! JSON checkpoints for models built on [`HashedEncoder`].

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, HashedEncoder};
use crate::error::{Error, Result};
use crate::model::{Heads, Model, ModelSpec};
use crate::units::UnitRegistry;

const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: u32,
    pub spec: ModelSpec,
    pub encoder: EncoderConfig,
    pub projection: Array2<f64>,
    pub heads: Heads,
    pub registry_fingerprint: String,
}

impl Checkpoint {
    pub fn of(model: &Model<HashedEncoder>) -> Self {
        Checkpoint {
            format: FORMAT,
            spec: model.spec,
            encoder: model.encoder.config().clone(),
            projection: model.encoder.projection().clone(),
            heads: model.heads.clone(),
            registry_fingerprint: model.registry().fingerprint().to_string(),
        }
    }

    /// Rebuilds the model; fails if `registry` is not the one it was trained with.
    pub fn into_model(self, registry: Arc<UnitRegistry>) -> Result<Model<HashedEncoder>> {
        if self.format != FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {}", self.format)));
        }
        if self.registry_fingerprint != registry.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: self.registry_fingerprint,
                actual: registry.fingerprint().to_string(),
            });
        }
        let encoder = HashedEncoder::from_parts(self.encoder, self.projection)?;
        Model::from_parts(self.spec, encoder, self.heads, registry)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn save_model(model: &Model<HashedEncoder>, path: &Path) -> Result<()> {
    Checkpoint::of(model).save(path)
}

pub fn load_model(path: &Path, registry: Arc<UnitRegistry>) -> Result<Model<HashedEncoder>> {
    Checkpoint::load(path)?.into_model(registry)
}
