//! Declarative experiment description, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AdamConfig, Schedule, TrainingSetup, Variant};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::model::{ConvSpec, LossWeights, ModelConfig, WorldModel};
use crate::planner::CEMConfig;

/// Model widths. Image size and action width come from the `[env]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub encoder: Vec<ConvSpec>,
    pub nce_horizons: Vec<usize>,
    /// Defaults to `true` exactly when the variant is `recon`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoder: Option<bool>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            latent_dim: m.latent_dim,
            embed_dim: m.embed_dim,
            hidden: m.hidden,
            encoder: m.encoder,
            nce_horizons: m.nce_horizons,
            decoder: None,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_variant() -> Variant {
    Variant::Miro
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run directory name and `run_id` prefix.
    pub name: String,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Run each seed in its own process.
    #[serde(default)]
    pub parallel: bool,
    /// Fill the `wall_ms` column (makes metrics files run-dependent).
    #[serde(default)]
    pub log_wall_clock: bool,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub planner: CEMConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl ExperimentConfig {
    /// Parses and validates; `origin` only labels errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_of(text, s.start));
            Error::Parse {
                path: origin.to_path_buf(),
                line,
                msg: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Canonical TOML with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn decoder(&self) -> bool {
        self.model.decoder.unwrap_or(self.variant == Variant::Recon)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_size: self.env.image_size,
            action_dim: self.env.task.action_dim(),
            latent_dim: self.model.latent_dim,
            embed_dim: self.model.embed_dim,
            hidden: self.model.hidden,
            encoder: self.model.encoder.clone(),
            nce_horizons: self.model.nce_horizons.clone(),
            decoder: self.decoder(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(Error::Config(format!(
                "name {:?} must be non-empty and use only ASCII letters, digits, '-', '_' or '.'",
                self.name
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        for (k, v) in [("loss.kl", self.loss.kl), ("loss.reward", self.loss.reward)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{k} must be a finite value ≥ 0, got {v}")));
            }
        }
        if self.variant == Variant::Recon && !self.decoder() {
            return Err(Error::Config("variant = \"recon\" requires model.decoder = true".into()));
        }
        self.env.validate()?;
        self.model_config().validate()?;
        self.planner.validate()?;
        self.schedule.validate()?;
        if self.schedule.chunk_len <= self.model.nce_horizons.iter().copied().max().unwrap_or(0) {
            return Err(Error::Config("schedule.chunk_len must exceed the largest NCE horizon".into()));
        }
        if self.schedule.chunk_len > self.env.episode_len {
            return Err(Error::Config("schedule.chunk_len exceeds env.episode_len".into()));
        }
        Ok(())
    }

    pub fn training_setup(&self, seed: u64) -> Result<TrainingSetup> {
        Ok(TrainingSetup {
            env: self.env.clone(),
            model: WorldModel::new(self.model_config())?,
            variant: self.variant,
            weights: self.loss,
            planner: self.planner.clone(),
            adam: self.adam,
            schedule: self.schedule.clone(),
            seed,
        })
    }

    pub fn run_id(&self, seed: u64) -> String {
        format!("{}-seed{seed}", self.name)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}
