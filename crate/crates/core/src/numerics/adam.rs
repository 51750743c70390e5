use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mlp::Parameters;
use super::tape::{Gradients, ParamKey};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam moments for one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<ParamKey, Tensor>,
    second: BTreeMap<ParamKey, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every parameter in `params`.
    ///
    /// Every parameter must have a gradient; nothing is modified otherwise.
    pub fn update(&mut self, params: Vec<(ParamKey, &mut Tensor)>, grads: &Gradients) -> Result<()> {
        for (key, p) in &params {
            let g = grads
                .get(key)
                .ok_or_else(|| Error::usage(format!("no gradient for parameter `{key}`")))?;
            p.expect_same_shape(g, key.0.as_str())?;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);

        for (key, p) in params {
            let g = grads.get(&key).expect("checked above");
            let m = self.first.entry(key.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second.entry(key).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form over any [`Parameters`] owner.
pub fn adam_step<P: Parameters + ?Sized>(params: &mut P, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    state.update(params.params_mut(), grads)
}
