//! Model assembly: encoder, two-stream stack and prediction head.

pub mod ean;
pub mod encoder;
pub mod interaction;
pub mod predictor;
pub mod san;
pub mod stack;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGrads, ParamStore, Tape, Var};
use crate::data::{ConversationSample, EmotionLabels};
use crate::error::{config_err, Result, TsamError};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Real;

pub use ean::{daee_lookup, ean_attend, init_emotion_embeddings, EanParams, EmotionEmbeddings};
pub use encoder::{encode_history, EncoderParams};
pub use interaction::{biaffine_exchange, BiAffineParams, Exchange};
pub use predictor::{cause_loss, head_forward, HeadParams, Prediction};
pub use san::{build_relation_graph, san_attend, single_relation_graph, RelationKind, SanParams, SpeakerRelationGraph};
pub use stack::{tsam_forward, LayerParams, LayerTrace, StackOutput, TsamStack};

/// Source of the emotion stream `H^e` at every layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionMode {
    /// No emotion information: `H^e = E_l`.
    None,
    /// Gold-label embedding lookup.
    Daee,
    /// Multi-head attention over the emotion embeddings.
    Ean,
}

impl EmotionMode {
    pub const ALL: [EmotionMode; 3] = [EmotionMode::None, EmotionMode::Daee, EmotionMode::Ean];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionMode::None => "none",
            EmotionMode::Daee => "daee",
            EmotionMode::Ean => "ean",
        }
    }
}

impl fmt::Display for EmotionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionMode {
    type Err = TsamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EmotionMode::None),
            "daee" => Ok(EmotionMode::Daee),
            "ean" => Ok(EmotionMode::Ean),
            other => Err(config_err("emotion", format!("expected none, daee or ean, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_h: usize,
    pub encoder_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub vocab_size: usize,
    pub max_history: usize,
    pub labels: Vec<String>,
    pub emotion: EmotionMode,
    pub speaker_relations: bool,
    pub interaction: bool,
    pub dropout: f64,
    pub leaky_slope: f64,
    /// Standard deviation of the random-normal emotion embedding init.
    pub emotion_init_std: f64,
    pub threshold: f64,
    pub lambda_enc: f64,
    pub lambda_other: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_h: 64,
            encoder_dim: 64,
            heads: 4,
            layers: 3,
            vocab_size: 1,
            max_history: 64,
            labels: EmotionLabels::default().labels().to_vec(),
            emotion: EmotionMode::Ean,
            speaker_relations: true,
            interaction: true,
            dropout: 0.1,
            leaky_slope: 0.2,
            emotion_init_std: 1.0,
            threshold: 0.5,
            lambda_enc: 0.01,
            lambda_other: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_h", self.d_h),
            ("encoder_dim", self.encoder_dim),
            ("vocab_size", self.vocab_size),
            ("max_history", self.max_history),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(config_err(field, "must be at least 1"));
            }
        }
        if self.emotion == EmotionMode::Ean {
            ean::check_heads(self.d_h, self.heads)?;
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout", format!("must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(config_err("threshold", format!("must lie in (0, 1), got {}", self.threshold)));
        }
        if !(self.emotion_init_std >= 0.0 && self.emotion_init_std.is_finite()) {
            return Err(config_err("emotion_init_std", "must be a finite non-negative number"));
        }
        if !self.leaky_slope.is_finite() {
            return Err(config_err("leaky_slope", "must be finite"));
        }
        for (field, v) in [("lambda_enc", self.lambda_enc), ("lambda_other", self.lambda_other)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(field, format!("must be a finite non-negative number, got {v}")));
            }
        }
        EmotionLabels::new(self.labels.clone()).map_err(|e| config_err("labels", e.to_string()))?;
        Ok(())
    }

    pub fn relation_kinds(&self) -> &'static [RelationKind] {
        if self.speaker_relations {
            &[RelationKind::Intra, RelationKind::Inter]
        } else {
            &[RelationKind::All]
        }
    }

    pub fn graph_for(&self, sample: &ConversationSample) -> SpeakerRelationGraph {
        if self.speaker_relations {
            build_relation_graph(&sample.speakers())
        } else {
            single_relation_graph(sample.len())
        }
    }
}

/// Full parameter set and architecture of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct TsamModel<T: Real> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub encoder: EncoderParams,
    pub emotions: EmotionEmbeddings,
    pub stack: TsamStack,
    pub head: HeadParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForwardOutput {
    pub hu: Var,
    pub stack: StackOutput,
    /// `t × 1` cause probabilities.
    pub probs: Var,
}

impl<T: Real> TsamModel<T> {
    /// Initializes every parameter from the `Init` sub-stream of `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Init);
        Self::init_with(config, &mut rng)
    }

    pub fn init_with<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = EncoderParams::init(&mut store, &config, rng)?;
        let emotions = init_emotion_embeddings(&mut store, &config.labels, config.d_h, config.emotion_init_std, rng)?;
        let stack = TsamStack::init(
            &mut store,
            config.layers,
            config.d_h,
            config.heads,
            config.emotion,
            config.relation_kinds(),
            config.interaction,
            config.dropout,
            config.leaky_slope,
            rng,
        )?;
        let head = HeadParams::init(&mut store, config.d_h, rng)?;
        Ok(Self {
            config,
            store,
            encoder,
            emotions,
            stack,
            head,
        })
    }

    pub fn tape(&self) -> Tape<'_, T> {
        Tape::with_params(&self.store)
    }

    /// Records the whole forward pass for `sample` on `tape`, which must be
    /// bound to `self.store`. Dropout is active iff `train_rng` is given.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, T>,
        sample: &ConversationSample,
        train_rng: Option<&mut R>,
    ) -> Result<ForwardOutput> {
        let graph = self.config.graph_for(sample);
        let emotions: Vec<&str> = sample.utterances.iter().map(|u| u.emotion.as_str()).collect();
        let hu = encode_history(tape, &self.encoder, &self.config, sample)?;
        let stack = tsam_forward(tape, hu, &graph, &self.stack, &self.emotions, &emotions, train_rng)?;
        let probs = head_forward(tape, stack.e, stack.s, &self.head)?;
        Ok(ForwardOutput { hu, stack, probs })
    }

    /// Training objective for one sample on an existing tape.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, T>,
        sample: &ConversationSample,
        train_rng: Option<&mut R>,
    ) -> Result<Var> {
        let out = self.forward(tape, sample, train_rng)?;
        cause_loss(
            tape,
            out.probs,
            &sample.cause_mask,
            &self.store,
            self.config.lambda_enc,
            self.config.lambda_other,
        )
    }

    /// Loss value and parameter gradients for one sample.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        sample: &ConversationSample,
        train_rng: Option<&mut R>,
    ) -> Result<(f64, ParamGrads<T>)> {
        let mut tape = self.tape();
        let loss = self.loss(&mut tape, sample, train_rng)?;
        let value = tape.value(loss).data()[0].as_f64();
        let grads = tape.backward(loss)?.param_grads(&tape);
        Ok((value, grads))
    }

    /// Eval-mode cause probabilities and thresholded labels.
    pub fn predict(&self, sample: &ConversationSample) -> Result<Prediction> {
        let mut tape = self.tape();
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, sample, None)?;
        let probs = tape.value(out.probs).data().iter().map(|p| p.as_f64()).collect();
        Ok(Prediction::from_probs(probs, self.config.threshold))
    }
}
