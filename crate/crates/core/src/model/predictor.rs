//! Cause prediction head and training objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::{Result, TsamError};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const BCE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `d_h × 2 d_h`
    pub w1: ParamId,
    pub b1: ParamId,
    /// `1 × d_h`
    pub w2: ParamId,
    pub b2: ParamId,
}

impl HeadParams {
    pub fn init<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, d_h: usize, rng: &mut R) -> Result<Self> {
        let g = ParamGroup::Other;
        Ok(Self {
            w1: store.add("head.w1", g, Tensor::glorot(d_h, 2 * d_h, rng))?,
            b1: store.add("head.b1", g, Tensor::zeros(&[d_h]))?,
            w2: store.add("head.w2", g, Tensor::glorot(1, d_h, rng))?,
            b2: store.add("head.b2", g, Tensor::zeros(&[1]))?,
        })
    }
}

/// Per-utterance cause probabilities (`t × 1`) from the final stream states.
pub fn head_forward<T: Real>(tape: &mut Tape<'_, T>, e: Var, s: Var, params: &HeadParams) -> Result<Var> {
    let (se, ss) = (tape.value(e).shape().to_vec(), tape.value(s).shape().to_vec());
    if se != ss {
        return Err(TsamError::Shape {
            op: "predict_causes",
            lhs: se,
            rhs: ss,
        });
    }
    let x = tape.concat_cols(&[e, s])?;
    let (w1, b1, w2, b2) = (
        tape.param(params.w1),
        tape.param(params.b1),
        tape.param(params.w2),
        tape.param(params.b2),
    );
    let h = tape.matmul_t(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h)?;
    let z = tape.matmul_t(h, w2)?;
    let z = tape.add_bias(z, b2)?;
    tape.sigmoid(z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub labels: Vec<bool>,
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>, threshold: f64) -> Self {
        let labels = probs.iter().map(|&p| p >= threshold).collect();
        Self { probs, labels }
    }
}

/// Mean BCE of `probs` against `gold` plus the two L2 penalties.
pub fn cause_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    probs: Var,
    gold: &[bool],
    store: &ParamStore<T>,
    lambda_enc: f64,
    lambda_other: f64,
) -> Result<Var> {
    let targets: Vec<T> = gold.iter().map(|&y| if y { T::one() } else { T::zero() }).collect();
    let mut loss = tape.mean_bce(probs, &targets, T::of(BCE_EPS))?;
    for (lambda, group) in [(lambda_enc, ParamGroup::Encoder), (lambda_other, ParamGroup::Other)] {
        if lambda == 0.0 {
            continue;
        }
        let mut penalty: Option<Var> = None;
        for (id, p) in store.iter() {
            if p.group != group {
                continue;
            }
            let v = tape.param(id);
            let sq = tape.sum_squares(v)?;
            penalty = Some(match penalty {
                None => sq,
                Some(acc) => tape.add(acc, sq)?,
            });
        }
        if let Some(pen) = penalty {
            let pen = tape.scale(pen, T::of(lambda))?;
            loss = tape.add(loss, pen)?;
        }
    }
    Ok(loss)
}
