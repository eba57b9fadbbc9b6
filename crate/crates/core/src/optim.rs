//! Adam with decoupled weight decay.

use crate::kernel::{Gradients, ParamId, ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Per-parameter moment estimates for a fixed subset of a [`ParamStore`].
///
/// One step shrinks every decayed parameter by `1 − lr·weight_decay` and then
/// applies the bias-corrected Adam update.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    step: u64,
    ids: Vec<ParamId>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamW {
    /// Optimizes every parameter currently in `store`.
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let ids = store.iter().map(|(id, _)| id).collect();
        Self::for_params(store, ids, lr, weight_decay)
    }

    pub fn for_params(store: &ParamStore, ids: Vec<ParamId>, lr: f64, weight_decay: f64) -> Self {
        let zeros = |id: &ParamId| {
            let (r, c) = store.value(*id).shape();
            Tensor::zeros(r, c)
        };
        Self {
            lr,
            weight_decay,
            step: 0,
            first: ids.iter().map(zeros).collect(),
            second: ids.iter().map(zeros).collect(),
            ids,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - BETA1.powi(t);
        let correction2 = 1.0 - BETA2.powi(t);
        for (slot, &id) in self.ids.iter().enumerate() {
            let decay = store.get(id).decay;
            let g = grads.get(id).data();
            let m = self.first[slot].data_mut();
            let v = self.second[slot].data_mut();
            let p = store.value_mut(id).data_mut();
            let shrink = 1.0 - self.lr * self.weight_decay;
            for i in 0..p.len() {
                if decay {
                    p[i] *= shrink;
                }
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}
