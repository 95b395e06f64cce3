//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment buffers are kept in parameter-store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            cfg,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the gradients stored in `store`; frozen parameters
    /// are skipped entirely.
    ///
    /// `p ← p − lr·wd·p − lr·m̂ / (√v̂ + eps)` with bias-corrected moments.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let (w, g) = (p.value.data_mut(), p.grad.data());
            for k in 0..w.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                if lr == 0.0 {
                    continue;
                }
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                w[k] = w[k] - lr * c.weight_decay * w[k] - lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}

/// Scales all trainable gradients so their global norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.frozen {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
    }
    norm
}
