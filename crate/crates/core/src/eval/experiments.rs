use std::fmt;

use serde::{Deserialize, Serialize};

use super::{evaluate, MetricsReport};
use crate::data::ConversationSample;
use crate::error::{Result, TsamError};
use crate::model::{EmotionMode, ModelConfig};
use crate::train::{train, TrainConfig};

/// One point of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub emotion: EmotionMode,
    pub speaker_relations: bool,
    pub interaction: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        emotion: EmotionMode::Ean,
        speaker_relations: true,
        interaction: true,
    };

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            emotion: self.emotion,
            speaker_relations: self.speaker_relations,
            interaction: self.interaction,
            ..base.clone()
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let onoff = |b: bool| if b { "on" } else { "off" };
        write!(
            f,
            "emotion={},speaker={},interaction={}",
            self.emotion,
            onoff(self.speaker_relations),
            onoff(self.interaction)
        )
    }
}

/// With `grid`, every emotion × speaker × interaction combination; otherwise
/// the full model followed by each single-axis change from it.
pub fn ablation_variants(grid: bool) -> Vec<Variant> {
    if grid {
        let mut out = Vec::with_capacity(12);
        for emotion in EmotionMode::ALL {
            for speaker_relations in [true, false] {
                for interaction in [true, false] {
                    out.push(Variant {
                        emotion,
                        speaker_relations,
                        interaction,
                    });
                }
            }
        }
        return out;
    }
    let full = Variant::FULL;
    vec![
        full,
        Variant {
            emotion: EmotionMode::Daee,
            ..full
        },
        Variant {
            emotion: EmotionMode::None,
            ..full
        },
        Variant {
            speaker_relations: false,
            ..full
        },
        Variant {
            interaction: false,
            ..full
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub name: String,
    pub best_epoch: usize,
    pub dev_macro_f1: f64,
    pub test: MetricsReport,
}

/// Trains and evaluates each variant with the same seed.
pub fn ablation_run(
    train_set: &[ConversationSample],
    dev_set: &[ConversationSample],
    test_set: &[ConversationSample],
    base: &ModelConfig,
    train_config: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|v| {
            let out = train::<f64>(train_set, dev_set, &v.apply(base), train_config)?;
            let (test, _) = evaluate(&out.model, test_set)?;
            Ok(AblationRow {
                variant: *v,
                name: v.name(),
                best_epoch: out.checkpoint.epoch,
                dev_macro_f1: out.checkpoint.dev_macro_f1,
                test,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layers: usize,
    pub best_epoch: usize,
    pub dev: MetricsReport,
}

/// Trains one model per layer count and reports its best dev metrics.
pub fn layer_sweep(
    train_set: &[ConversationSample],
    dev_set: &[ConversationSample],
    base: &ModelConfig,
    train_config: &TrainConfig,
    layers: &[usize],
) -> Result<Vec<SweepRow>> {
    if layers.is_empty() {
        return Err(TsamError::InvalidArgument("empty layer range".into()));
    }
    layers
        .iter()
        .map(|&l| {
            let cfg = ModelConfig {
                layers: l,
                ..base.clone()
            };
            let out = train::<f64>(train_set, dev_set, &cfg, train_config)?;
            let (dev, _) = evaluate(&out.model, dev_set)?;
            Ok(SweepRow {
                layers: l,
                best_epoch: out.checkpoint.epoch,
                dev,
            })
        })
        .collect()
}
