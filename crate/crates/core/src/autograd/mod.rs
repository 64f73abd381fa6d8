//! Tensor kernel with reverse-mode differentiation, Adam, and gradient checking.

mod adam;
mod gradcheck;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use params::{Param, ParamGrads, ParamGroup, ParamId, ParamStore};
pub use tape::{Activation, Gradients, Tape, Var};
