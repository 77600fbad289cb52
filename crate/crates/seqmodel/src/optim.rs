use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{Gradients, ParamKey};
use crate::model::Seq2Seq;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamKey, (Matrix, Matrix)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `models` that has a
    /// gradient. Returns the gradient norm before clipping.
    pub fn step(&mut self, models: &mut [&mut Seq2Seq], grads: &Gradients) -> f64 {
        let norm = grads.global_norm();
        let clip = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for model in models.iter_mut() {
            let slot = model.slot();
            for (i, p) in model.params_mut().iter_mut().enumerate() {
                let Some(g) = grads.get((slot, i)) else { continue };
                let (m, v) = self
                    .moments
                    .entry((slot, i))
                    .or_insert_with(|| (Matrix::zeros(g.rows, g.cols), Matrix::zeros(g.rows, g.cols)));
                for (((w, &gi), mi), vi) in p.value.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                    let gi = gi * clip;
                    *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                    *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                    let m_hat = *mi / bias1;
                    let v_hat = *vi / bias2;
                    *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                }
            }
        }
        norm
    }
}
