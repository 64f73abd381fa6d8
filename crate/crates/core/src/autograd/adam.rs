use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamStore};
use crate::error::{Result, TsamError};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Learning rate 1e-5 is the value used when fine-tuning a large
    /// pretrained encoder; desk-scale training overrides it.
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for every parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.value.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update of every parameter in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(TsamError::Shape {
                op: "adam_step",
                lhs: vec![store.len()],
                rhs: vec![grads.len(), self.m.len()],
            });
        }
        for id in store.ids() {
            let (n, g) = (store.get(id).numel(), grads.get(id));
            if g.len() != n || self.m[id.index()].len() != n {
                return Err(TsamError::Shape {
                    op: "adam_step",
                    lhs: store.get(id).shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let one = T::one();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in store.get_mut(id).data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
