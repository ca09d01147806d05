//! Run configuration: a TOML file with model/train/data/output sections,
//! flag overrides applied on top, and a content hash that output file names
//! embed so runs with different settings never collide.

use anyhow::{Context, Result};
use handgcn::posenet::ModelConfig;
use handgcn::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Size of the generated synthetic benchmark set.
    pub synth_count: usize,
    /// Cap on loaded samples per split for real datasets.
    pub limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synth_count: 32,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Epoch interval between periodic checkpoint writes; the final state
    /// is always written regardless.
    pub checkpoint_every_epochs: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            checkpoint_every_epochs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

impl AppConfig {
    /// Reads the TOML file when given, otherwise starts from defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => AppConfig::default(),
        };
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        anyhow::ensure!(self.data.synth_count >= 1, "data.synth_count must be at least 1");
        anyhow::ensure!(
            self.output.checkpoint_every_epochs >= 1,
            "output.checkpoint_every_epochs must be at least 1"
        );
        Ok(())
    }

    /// Eight hex characters over the canonical serialization — covers every
    /// setting that changes behaviour, including flag overrides, because it
    /// is computed after they are applied.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        let mut hash = String::with_capacity(8);
        for byte in &digest[..4] {
            let _ = write!(hash, "{byte:02x}");
        }
        hash
    }
}
