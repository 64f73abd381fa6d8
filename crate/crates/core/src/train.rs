//! Training loop with early stopping on dev macro F1, and checkpoints.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{AdamConfig, AdamState, ParamGrads, ParamGroup, ParamStore};
use crate::data::{ConversationSample, Vocab};
use crate::error::{config_err, Result, TsamError};
use crate::eval::evaluate;
use crate::model::{ModelConfig, TsamModel};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "tsam-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Conversations per optimizer step; gradients are averaged.
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub patience: usize,
    pub seed: u64,
    /// Stop as soon as dev macro F1 reaches this value.
    pub target_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 40,
            batch_size: 2,
            lr: 1e-3,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            patience: 5,
            seed: 0,
            target_f1: None,
        }
    }
}

impl TrainConfig {
    /// Optimizer settings for fine-tuning a large pretrained encoder.
    pub fn paper() -> Self {
        Self {
            lr: AdamConfig::default().lr,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(config_err("patience", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err("lr", format!("must be positive, got {}", self.lr)));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err(field, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(config_err("adam_eps", "must be positive"));
        }
        if let Some(t) = self.target_f1 {
            if !(0.0..=1.0).contains(&t) {
                return Err(config_err("target_f1", format!("must lie in [0, 1], got {t}")));
            }
        }
        Ok(())
    }
}

/// Patience counter over a score that should increase.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records the score of a 1-based `epoch`; improvement must be strict.
    pub fn update(&mut self, epoch: usize, score: f64) -> StopDecision {
        let improved = self.best.is_none_or(|b| score > b);
        if improved {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision {
            improved,
            stop: self.since_best >= self.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vocab>,
    pub dev_macro_f1: f64,
    /// 1-based epoch the parameters come from; 0 for an untrained model.
    pub epoch: usize,
    pub params: Vec<CheckpointParam>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &TsamModel<T>, train_config: &TrainConfig, dev_macro_f1: f64, epoch: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model_config: model.config.clone(),
            train_config: train_config.clone(),
            vocab: None,
            dev_macro_f1,
            epoch,
            params: model
                .store
                .iter()
                .map(|(_, p)| CheckpointParam {
                    name: p.name.clone(),
                    group: p.group,
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model; parameter names, groups and shapes must match the
    /// architecture implied by `model_config`.
    pub fn to_model<T: Real>(&self) -> Result<TsamModel<T>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(TsamError::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(TsamError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = TsamModel::<T>::init(self.model_config.clone(), 0)?;
        if model.store.len() != self.params.len() {
            return Err(TsamError::Checkpoint(format!(
                "{} parameters stored but the configuration needs {}",
                self.params.len(),
                model.store.len()
            )));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for (id, saved) in ids.into_iter().zip(&self.params) {
            let p = model.store.param(id);
            if p.name != saved.name || p.group != saved.group || p.value.shape() != saved.shape.as_slice() {
                return Err(TsamError::Checkpoint(format!(
                    "parameter `{}` {:?} does not match expected `{}` {:?}",
                    saved.name,
                    saved.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            let data = saved.data.iter().map(|&v| T::of(v)).collect();
            *model.store.get_mut(id) = Tensor::new(saved.shape.clone(), data)
                .map_err(|e| TsamError::Checkpoint(format!("parameter `{}`: {e}", saved.name)))?;
        }
        if !model.store.is_finite() {
            return Err(TsamError::Checkpoint("non-finite parameter values".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<T: Real> {
    pub model: TsamModel<T>,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn diverged(epoch: usize, batch: usize, loss: f64) -> TsamError {
    TsamError::Divergence { epoch, batch, loss }
}

/// Trains from a fresh initialization and returns the best-on-dev model.
pub fn train<T: Real>(
    train_set: &[ConversationSample],
    dev_set: &[ConversationSample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_observed(train_set, dev_set, model_config, train_config, |_| {})
}

/// [`train`], calling `observe` after every epoch.
pub fn train_observed<T: Real, F: FnMut(&EpochRecord)>(
    train_set: &[ConversationSample],
    dev_set: &[ConversationSample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut observe: F,
) -> Result<TrainOutcome<T>> {
    train_config.validate()?;
    if train_set.is_empty() {
        return Err(TsamError::InvalidArgument("training set is empty".into()));
    }
    if dev_set.is_empty() {
        return Err(TsamError::InvalidArgument("dev set is empty".into()));
    }
    let seed = train_config.seed;
    let mut model = TsamModel::<T>::init(model_config.clone(), seed)?;
    let mut adam = AdamState::new(&model.store, train_config.adam());
    let mut shuffle_rng = stream_rng(seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(train_config.patience);
    let mut best: Option<(ParamStore<T>, f64, usize)> = None;
    let mut history = Vec::new();

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total_loss = 0.0;
        for (b, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let batch = b + 1;
            let mut grads = ParamGrads::zeros_like(&model.store);
            for &i in chunk {
                let (loss, g) = match model.loss_and_grads(&train_set[i], Some(&mut dropout_rng)) {
                    Ok(x) => x,
                    Err(TsamError::NonFinite(_)) => return Err(diverged(epoch, batch, f64::NAN)),
                    Err(e) => return Err(e),
                };
                if !loss.is_finite() {
                    return Err(diverged(epoch, batch, loss));
                }
                total_loss += loss;
                grads.accumulate(&g);
            }
            grads.scale(T::of(1.0 / chunk.len() as f64));
            if !grads.is_finite() {
                return Err(diverged(epoch, batch, f64::NAN));
            }
            adam.step(&mut model.store, &grads)?;
            if !model.store.is_finite() {
                return Err(diverged(epoch, batch, f64::NAN));
            }
        }
        let (dev, _) = evaluate(&model, dev_set)?;
        let decision = stopper.update(epoch, dev.macro_f1);
        if decision.improved {
            best = Some((model.store.clone(), dev.macro_f1, epoch));
        }
        let record = EpochRecord {
            epoch,
            train_loss: total_loss / train_set.len() as f64,
            dev_macro_f1: dev.macro_f1,
            improved: decision.improved,
        };
        observe(&record);
        history.push(record);
        let reached = train_config.target_f1.is_some_and(|t| dev.macro_f1 >= t);
        if decision.stop || reached {
            break;
        }
    }

    let (store, f1, epoch) = best.expect("at least one epoch ran");
    model.store = store;
    let checkpoint = Checkpoint::from_model(&model, train_config, f1, epoch);
    Ok(TrainOutcome {
        model,
        checkpoint,
        history,
    })
}
