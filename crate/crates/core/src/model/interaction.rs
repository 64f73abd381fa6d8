//! Mutual BiAffine exchange between the emotion and speaker streams.

use rand::Rng;

use crate::autograd::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::{Result, TsamError};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BiAffineParams {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl BiAffineParams {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w1: store.add(format!("{prefix}.biaffine.w1"), ParamGroup::Other, Tensor::glorot(d_h, d_h, rng))?,
            w2: store.add(format!("{prefix}.biaffine.w2"), ParamGroup::Other, Tensor::glorot(d_h, d_h, rng))?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exchange {
    pub he: Var,
    pub hs: Var,
    pub a1: Var,
    pub a2: Var,
}

/// `A1 = softmax(He W1 Hsᵀ)`, `A2 = softmax(Hs W2 Heᵀ)` row-wise;
/// returns `He' = A1 Hs` and `Hs' = A2 He` with both attention matrices.
pub fn biaffine_exchange<T: Real>(
    tape: &mut Tape<'_, T>,
    he: Var,
    hs: Var,
    params: &BiAffineParams,
) -> Result<Exchange> {
    let (se, ss) = (tape.value(he).shape().to_vec(), tape.value(hs).shape().to_vec());
    if se != ss {
        return Err(TsamError::Shape {
            op: "biaffine_exchange",
            lhs: se,
            rhs: ss,
        });
    }
    let (w1, w2) = (tape.param(params.w1), tape.param(params.w2));
    let left = tape.matmul(he, w1)?;
    let s1 = tape.matmul_t(left, hs)?;
    let a1 = tape.softmax_rows(s1)?;
    let right = tape.matmul(hs, w2)?;
    let s2 = tape.matmul_t(right, he)?;
    let a2 = tape.softmax_rows(s2)?;
    Ok(Exchange {
        he: tape.matmul(a1, hs)?,
        hs: tape.matmul(a2, he)?,
        a1,
        a2,
    })
}
