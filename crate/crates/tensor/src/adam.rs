use crate::error::{Result, TensorError};
use crate::param::{Grads, ParamStore};

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m1: Vec<Vec<f64>>,
    pub m2: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    /// Zeroed moments, β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        AdamState { m1: zeros.clone(), m2: zeros, t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8, lr }
    }

    /// One update. If any gradient coordinate is non-finite nothing changes.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        assert_eq!(self.m1.len(), store.len(), "optimizer built for a different store");
        for (id, p) in store.iter() {
            if grads.get(id).iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NonFinite { name: p.name.clone() });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            let (m1, m2) = (&mut self.m1[id.0], &mut self.m2[id.0]);
            let value = &mut store.get_mut(id).value;
            for k in 0..value.len() {
                m1[k] = self.beta1 * m1[k] + (1.0 - self.beta1) * g[k];
                m2[k] = self.beta2 * m2[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m1[k] / bc1;
                let vhat = m2[k] / bc2;
                value[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
