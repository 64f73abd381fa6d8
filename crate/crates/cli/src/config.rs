//! Run configuration: TOML file merged with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use tsam::data::SynthConfig;
use tsam::model::{EmotionMode, ModelConfig};
use tsam::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub data: DataPaths,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// The effective seed: the top-level `seed` wins over `train.seed`.
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for machine-readable artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// Model and optimizer overrides.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dh: Option<usize>,
    #[arg(long)]
    pub emotion: Option<EmotionMode>,
    #[arg(long)]
    pub no_speaker_relations: bool,
    #[arg(long)]
    pub no_interaction: bool,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

/// Resolves flag > file > default and validates the result.
pub fn resolve(common: &Common, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    cfg.train.seed = cfg.seed();
    let m = &mut cfg.model;
    if let Some(v) = overrides.layers {
        m.layers = v;
    }
    if let Some(v) = overrides.heads {
        m.heads = v;
    }
    if let Some(v) = overrides.dh {
        m.d_h = v;
    }
    if let Some(v) = overrides.emotion {
        m.emotion = v;
    }
    if overrides.no_speaker_relations {
        m.speaker_relations = false;
    }
    if overrides.no_interaction {
        m.interaction = false;
    }
    if let Some(v) = overrides.threshold {
        m.threshold = v;
    }
    let t = &mut cfg.train;
    if let Some(v) = overrides.epochs {
        t.epochs = v;
    }
    if let Some(v) = overrides.lr {
        t.lr = v;
    }
    if let Some(v) = overrides.patience {
        t.patience = v;
    }
    if let Some(v) = overrides.batch_size {
        t.batch_size = v;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}
