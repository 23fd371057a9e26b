use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use simulst::harness::{BenchConfig, SweepConfig};
use simulst::nn::ModelConfig;
use simulst::synthetic::{SyntheticSpec, TrainConfig};

/// Contents of a `--config` TOML file. Every section is optional and
/// command-line flags take precedence over it.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Default for every seed below.
    pub seed: Option<u64>,
    pub generate: GenerateConfig,
    pub corpus: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub utterances: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { utterances: 1000 }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))?;
        if let Some(seed) = cfg.seed {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.corpus.seed = seed;
        self.train.seed = seed;
        self.sweep.seeds = vec![seed];
    }
}
