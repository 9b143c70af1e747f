//! The TOML run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{config_hash, RunConfig};
use crate::model::{Activation, ModelConfig, TrainHparams};
use crate::tasks::{MixtureWeights, SuiteConfig};

/// Overrides the configured output directory when set.
pub const OUTPUT_ROOT_ENV: &str = "TASKVEC_OUTPUT_ROOT";

/// Model shape; the vocabulary size follows from the task suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    pub tied_unembedding: bool,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            max_seq_len: m.max_seq_len,
            seed: m.seed,
            tied_unembedding: m.tied_unembedding,
            activation: m.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub data_seed: u64,
    pub base: TrainHparams,
    pub base_mixture: MixtureWeights,
    /// Run the image fine-tune after the base model.
    pub fine_tune: bool,
    pub fine_tune_hparams: TrainHparams,
    pub fine_tune_mixture: MixtureWeights,
    pub fine_tune_lr_multiplier: f64,
    /// Print a progress line every this many steps (0 disables).
    pub log_every: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            data_seed: 1,
            base: TrainHparams {
                steps: 7000,
                lr: 1e-3,
                ..TrainHparams::default()
            },
            base_mixture: MixtureWeights::text_only(),
            fine_tune: true,
            fine_tune_hparams: TrainHparams {
                steps: 2000,
                lr: 1e-3,
                warmup_steps: 50,
                ..TrainHparams::default()
            },
            fine_tune_mixture: MixtureWeights::with_images(),
            fine_tune_lr_multiplier: 0.1,
            log_every: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default") }
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub model: ModelSection,
    pub training: TrainingSection,
    pub suite: SuiteConfig,
    /// Evaluation settings; the suite comes from `[suite]`.
    pub experiments: RunConfig,
    pub output: OutputSection,
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.run_config().validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            vocab_size,
            max_seq_len: m.max_seq_len,
            seed: m.seed,
            tied_unembedding: m.tied_unembedding,
            activation: m.activation,
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            suite: self.suite.clone(),
            ..self.experiments.clone()
        }
    }

    /// Hash of everything that can change a number; the output location is
    /// excluded.
    pub fn hash(&self) -> Result<String> {
        config_hash(&(&self.model, &self.training, &self.suite, &self.experiments))
    }

    /// Hash of the sections that determine the checkpoints.
    pub fn training_hash(&self) -> Result<String> {
        config_hash(&(&self.model, &self.training, &self.suite))
    }

    /// The configured output directory, unless the environment overrides it.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => self.output.dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = CliConfig::from_toml("").unwrap();
        assert_eq!(cfg, CliConfig::default());
        assert_eq!(cfg.run_config(), RunConfig::default());
    }

    #[test]
    fn shipped_config_is_the_default() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
        assert_eq!(CliConfig::load(path).unwrap(), CliConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(CliConfig::from_toml("[model]\nwidth = 3\n").is_err());
        assert!(CliConfig::from_toml("[nonsense]\n").is_err());
        assert!(CliConfig::from_toml("[experiments]\nbogus = 1\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = CliConfig::default();
        cfg.experiments.layer = Some(3);
        cfg.training.base.steps = 7;
        let back = CliConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn output_dir_does_not_change_the_hash() {
        let a = CliConfig::default();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.experiments.n_examples = 4;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
