use super::TrainConfig;
use crate::tensor::{Gradients, ParamStore, Scalar, Tensor};

/// Linear warmup from `lr/10` to `lr` over the warmup epochs, constant
/// until `decay_start`, then `lr · factor^(epoch − decay_start + 1)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let base = cfg.lr;
    if epoch < cfg.warmup_epochs {
        base * (0.1 + 0.9 * epoch as f64 / cfg.warmup_epochs as f64)
    } else if epoch < cfg.decay_start {
        base
    } else {
        base * cfg.decay_factor.powi((epoch - cfg.decay_start + 1) as i32)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (lr_t, eps) = (T::of(lr * c2.sqrt() / c1), T::of(self.eps * c2.sqrt()));
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            for (k, p) in params.get_mut(id).data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                *p -= lr_t * m[k] / (v[k].sqrt() + eps);
            }
        }
    }
}
