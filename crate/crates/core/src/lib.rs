//! Emotion-cause detection in conversations (TSAM).
//!
//! Given a conversational history `u_1..u_t` whose last utterance carries a
//! non-neutral emotion, the model jointly decides for every `u_i` whether it
//! contains the cause of that emotion. An emotion stream (attention over
//! emotion-label embeddings) and a speaker stream (relational graph attention
//! over same-speaker / other-speaker edges) run in parallel and exchange
//! information through a mutual biaffine alignment, stacked over several
//! layers.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the concrete
//! aliases below fix the 64-bit instantiation used by training and checks.

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Result, TsamError};
pub use scalar::Real;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64<'p> = autograd::Tape<'p, f64>;
pub type ParamStore64 = autograd::ParamStore<f64>;
pub type Model64 = model::TsamModel<f64>;
pub type Model32 = model::TsamModel<f32>;
