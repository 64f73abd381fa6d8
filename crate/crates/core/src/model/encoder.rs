//! Trainable contextual utterance encoder.
//!
//! Tokens of the whole history are embedded, summed with a learned embedding
//! of their utterance's turn distance to the target (0 for the target itself),
//! passed through one single-head self-attention layer with a residual
//! connection, mean-pooled per utterance, projected to `d_h` and normalized
//! per row to zero mean and unit variance.

use std::rc::Rc;

use rand::Rng;

use super::ModelConfig;
use crate::autograd::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::data::ConversationSample;
use crate::error::{Result, TsamError};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const EMBED_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub output_bias: ParamId,
}

impl EncoderParams {
    pub fn init<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (v, p, de, dh) = (cfg.vocab_size, cfg.max_history, cfg.encoder_dim, cfg.d_h);
        let g = ParamGroup::Encoder;
        Ok(Self {
            token_embedding: store.add("encoder.token_embedding", g, Tensor::randn(&[v, de], EMBED_STD, rng))?,
            position_embedding: store.add("encoder.position_embedding", g, Tensor::randn(&[p, de], EMBED_STD, rng))?,
            query: store.add("encoder.query", g, Tensor::glorot(de, de, rng))?,
            key: store.add("encoder.key", g, Tensor::glorot(de, de, rng))?,
            value: store.add("encoder.value", g, Tensor::glorot(de, de, rng))?,
            output: store.add("encoder.output", g, Tensor::glorot(de, dh, rng))?,
            output_bias: store.add("encoder.output_bias", g, Tensor::zeros(&[dh]))?,
        })
    }

    pub fn ids(&self) -> [ParamId; 7] {
        [
            self.token_embedding,
            self.position_embedding,
            self.query,
            self.key,
            self.value,
            self.output,
            self.output_bias,
        ]
    }
}

/// `H^u`: one `d_h` row per utterance of `sample`.
pub fn encode_history<T: Real>(
    tape: &mut Tape<'_, T>,
    params: &EncoderParams,
    cfg: &ModelConfig,
    sample: &ConversationSample,
) -> Result<Var> {
    let t = sample.len();
    if t == 0 {
        return Err(TsamError::InvalidArgument("cannot encode an empty history".into()));
    }
    if t > cfg.max_history {
        return Err(TsamError::InvalidArgument(format!(
            "history of {t} utterances exceeds the limit of {}",
            cfg.max_history
        )));
    }
    let mut tokens = Vec::new();
    let mut positions = Vec::new();
    let mut segments = Vec::with_capacity(t);
    for (i, u) in sample.utterances.iter().enumerate() {
        if u.tokens.is_empty() {
            return Err(TsamError::InvalidArgument(format!(
                "utterance {} of `{}` has no tokens",
                i + 1,
                sample.conversation_id
            )));
        }
        if let Some(&bad) = u.tokens.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(TsamError::InvalidArgument(format!(
                "token id {bad} is outside the vocabulary of size {}",
                cfg.vocab_size
            )));
        }
        let start = tokens.len();
        tokens.extend(u.tokens.iter().map(|&id| id as usize));
        positions.extend(std::iter::repeat_n(t - 1 - i, u.tokens.len()));
        segments.push((start, tokens.len()));
    }

    let tok_table = tape.param(params.token_embedding);
    let pos_table = tape.param(params.position_embedding);
    let tok = tape.gather_rows(tok_table, Rc::from(tokens))?;
    let pos = tape.gather_rows(pos_table, Rc::from(positions))?;
    let x = tape.add(tok, pos)?;

    let (wq, wk, wv) = (tape.param(params.query), tape.param(params.key), tape.param(params.value));
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let scores = tape.matmul_t(q, k)?;
    let scores = tape.scale(scores, T::of(1.0 / (cfg.encoder_dim as f64).sqrt()))?;
    let attn = tape.softmax_rows(scores)?;
    let mixed = tape.matmul(attn, v)?;
    let z = tape.add(x, mixed)?;

    let pooled = tape.segment_mean(z, Rc::from(segments))?;
    let (w_out, b_out) = (tape.param(params.output), tape.param(params.output_bias));
    let h = tape.matmul(pooled, w_out)?;
    let h = tape.add_bias(h, b_out)?;
    tape.layer_norm_rows(h, T::of(LAYER_NORM_EPS))
}
