//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::ModelParams;
use crate::optim::OptimizerState;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub model: ModelParams,
    /// Epoch the parameters were taken from (0 for an untrained head).
    pub epoch: usize,
    #[serde(default)]
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(model: ModelParams, epoch: usize) -> Self {
        Self {
            format: FORMAT_VERSION,
            model,
            epoch,
            optimizer: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                ck.format
            )));
        }
        ck.validate()?;
        Ok(ck)
    }

    fn validate(&self) -> Result<()> {
        for p in &self.model.params {
            if p.active.len() != p.value.len() {
                return Err(Error::Schema(format!(
                    "{}: mask has {} entries for {} values",
                    p.name,
                    p.active.len(),
                    p.value.len()
                )));
            }
            if p.value.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint parameter {}", p.name)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
