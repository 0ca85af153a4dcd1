//! Versioned training checkpoints: a magic header line followed by JSON.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::nn::{Adam, PolicyParams};

pub const MAGIC: &str = "SEATWIN-CKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub params: PolicyParams,
    pub optimizer: Adam,
    /// Episodes completed so far.
    pub episode: u64,
    /// Episode at which the learning-rate schedule was (re)started.
    pub lr_origin: u64,
    /// Number of successful policy updates.
    pub params_version: u64,
    pub agent_rng: ChaCha8Rng,
    pub env_rng: ChaCha8Rng,
    /// Joint encoder offset of the rig when the checkpoint was taken.
    pub encoder_offset: f64,
}

impl Checkpoint {
    pub fn to_string(&self) -> Result<String, HarnessError> {
        Ok(format!("{MAGIC} v{FORMAT_VERSION}\n{}\n", serde_json::to_string(self)?))
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let (header, body) = text.split_once('\n').ok_or_else(|| HarnessError::Checkpoint("missing header line".into()))?;
        let version = header
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().strip_prefix('v'))
            .ok_or_else(|| HarnessError::Checkpoint(format!("not a checkpoint (header `{header}`)")))?;
        let version: u32 = version.parse().map_err(|_| HarnessError::Checkpoint(format!("bad version `{version}`")))?;
        if version != FORMAT_VERSION {
            return Err(HarnessError::Checkpoint(format!(
                "incompatible checkpoint version {version} (this build reads v{FORMAT_VERSION})"
            )));
        }
        let ckpt: Self = serde_json::from_str(body)?;
        ckpt.config.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text = self.to_string()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
        f.write_all(text.as_bytes()).map_err(|e| HarnessError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }
}
