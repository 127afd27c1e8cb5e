//! Adam with global-norm gradient clipping.

use crate::params::ParamStore;
use crate::tensor::Tensor;

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip_norm: Option<f64>,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, clip_norm: Option<f64>) -> Self {
        let m = store.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        let v = store.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            step: 0,
            m,
            v,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &mut [Tensor]) {
        if let Some(max_norm) = self.clip_norm {
            let total: f64 = grads.iter().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum();
            let norm = total.sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                for g in grads.iter_mut() {
                    g.scale_in_place(scale);
                }
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = store.value_mut(crate::params::ParamId(i));
            for j in 0..g.numel() {
                let gj = g.data()[j];
                m.data_mut()[j] = self.beta1 * m.data()[j] + (1.0 - self.beta1) * gj;
                v.data_mut()[j] = self.beta2 * v.data()[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m.data()[j] / bc1;
                let vhat = v.data()[j] / bc2;
                p.data_mut()[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
