//! Emotion attention: utterances query a table of emotion-label embeddings.

use std::rc::Rc;

use rand::Rng;

use crate::autograd::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::data::EmotionLabels;
use crate::error::{config_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// `X^e`: one trainable row per emotion label, in label-set order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionEmbeddings {
    pub table: ParamId,
    pub labels: EmotionLabels,
}

pub fn init_emotion_embeddings<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    labels: &[String],
    d_h: usize,
    std: f64,
    rng: &mut R,
) -> Result<EmotionEmbeddings> {
    let labels = EmotionLabels::new(labels.to_vec())?;
    let table = store.add("emotion.embeddings", ParamGroup::Other, Tensor::randn(&[labels.len(), d_h], std, rng))?;
    Ok(EmotionEmbeddings { table, labels })
}

/// Per-head query/key/value projections, each `d_h × d_h/m`.
#[derive(Clone, Debug, PartialEq)]
pub struct EanParams {
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
}

impl EanParams {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_h: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_heads(d_h, heads)?;
        let dk = d_h / heads;
        let mut p = Self {
            query: Vec::with_capacity(heads),
            key: Vec::with_capacity(heads),
            value: Vec::with_capacity(heads),
        };
        for j in 0..heads {
            p.query.push(store.add(format!("{prefix}.ean.query.{j}"), ParamGroup::Other, Tensor::glorot(d_h, dk, rng))?);
            p.key.push(store.add(format!("{prefix}.ean.key.{j}"), ParamGroup::Other, Tensor::glorot(d_h, dk, rng))?);
            p.value.push(store.add(format!("{prefix}.ean.value.{j}"), ParamGroup::Other, Tensor::glorot(d_h, dk, rng))?);
        }
        Ok(p)
    }

    pub fn heads(&self) -> usize {
        self.query.len()
    }
}

pub fn check_heads(d_h: usize, heads: usize) -> Result<()> {
    if heads == 0 || d_h % heads != 0 {
        return Err(config_err("heads", format!("{heads} heads do not divide d_h = {d_h}")));
    }
    Ok(())
}

/// Multi-head attention from `queries` (`t × d_h`) to the emotion table.
///
/// Scores are scaled by `1/sqrt(d_h)` (the full width, not the head width).
/// Heads are concatenated without an output projection. Returns `H^e` and
/// the `t × |E|` attention matrix of each head.
pub fn ean_attend<T: Real>(
    tape: &mut Tape<'_, T>,
    queries: Var,
    emotions: &EmotionEmbeddings,
    params: &EanParams,
) -> Result<(Var, Vec<Var>)> {
    let d_h = tape.value(queries).cols();
    check_heads(d_h, params.heads())?;
    let table = tape.param(emotions.table);
    let scale = T::of(1.0 / (d_h as f64).sqrt());
    let mut heads = Vec::with_capacity(params.heads());
    let mut attention = Vec::with_capacity(params.heads());
    for j in 0..params.heads() {
        let (wq, wk, wv) = (
            tape.param(params.query[j]),
            tape.param(params.key[j]),
            tape.param(params.value[j]),
        );
        let q = tape.matmul(queries, wq)?;
        let k = tape.matmul(table, wk)?;
        let v = tape.matmul(table, wv)?;
        let scores = tape.matmul_t(q, k)?;
        let scores = tape.scale(scores, scale)?;
        let alpha = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(alpha, v)?);
        attention.push(alpha);
    }
    let out = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    Ok((out, attention))
}

/// DAEE: row `i` is the embedding of utterance `i`'s gold emotion label.
pub fn daee_lookup<T: Real>(
    tape: &mut Tape<'_, T>,
    emotions: &EmotionEmbeddings,
    utterance_emotions: &[&str],
) -> Result<Var> {
    let idx = utterance_emotions
        .iter()
        .map(|e| emotions.labels.index_of(e))
        .collect::<Result<Vec<_>>>()?;
    let table = tape.param(emotions.table);
    tape.gather_rows(table, Rc::from(idx))
}
