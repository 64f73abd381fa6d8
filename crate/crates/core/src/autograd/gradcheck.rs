//! Central finite-difference verification of tape gradients.

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Result, TsamError};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval<T, F>(store: &ParamStore<T>, f: &F) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<'_, T>) -> Result<Var>,
{
    let mut tape = Tape::with_params(store);
    let out = f(&mut tape)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(TsamError::InvalidArgument(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0].as_f64())
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences with step `h`, for every parameter in `store`.
///
/// `f` must build the same function on every call; a mismatch between two
/// evaluations at the same point is reported as an error.
pub fn grad_check<T, F>(store: &mut ParamStore<T>, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<'_, T>) -> Result<Var>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(TsamError::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let first = eval(store, &f)?;
    let second = eval(store, &f)?;
    if first.to_bits() != second.to_bits() {
        return Err(TsamError::NonDeterministic { first, second });
    }

    let analytic = {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        tape.backward(out)?.param_grads(&tape)
    };

    let ids: Vec<ParamId> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let mut worst = 0.0f64;
        for k in 0..store.get(id).numel() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + T::of(h);
            let plus = eval(store, &f);
            store.get_mut(id).data_mut()[k] = orig - T::of(h);
            let minus = eval(store, &f);
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            worst = worst.max(relative_error(analytic.get(id)[k].as_f64(), numeric));
        }
        params.push(ParamCheck {
            name: store.param(id).name.clone(),
            max_rel_error: worst,
        });
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}
