use crate::autodiff::{Real, Tensor};

use super::params::ParamStore;

/// RMSProp with per-parameter running mean of squared gradients:
/// `s = decay s + (1 - decay) g²`, `p = p - lr g / (sqrt(s) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp<T> {
    pub decay: f64,
    pub eps: f64,
    state: Vec<Tensor<T>>,
}

impl<T: Real> RmsProp<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self::with(store, 0.9, 1e-8)
    }

    pub fn with(store: &ParamStore<T>, decay: f64, eps: f64) -> Self {
        RmsProp {
            decay,
            eps,
            state: store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn state(&self) -> &[Tensor<T>] {
        &self.state
    }

    /// Applies one update to every trainable tensor. `grads` is in store order.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) {
        let (d, e, lr) = (T::of(self.decay), T::of(self.eps), T::of(lr));
        let one = T::one();
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if !store.is_trainable(id) {
                continue;
            }
            let s = self.state[k].data_mut();
            let p = store.get_mut(id).data_mut();
            for ((pv, sv), &gv) in p.iter_mut().zip(s.iter_mut()).zip(grads[k].data()) {
                *sv = d * *sv + (one - d) * gv * gv;
                *pv -= lr * gv / (sv.sqrt() + e);
            }
        }
    }
}

/// Global-norm clipping in place. Returns the norm before clipping.
pub fn clip_gradients<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// Step-wise exponential decay `base · rate^(step / interval)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub rate: f64,
    pub interval: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 1e-4,
            rate: 0.9,
            interval: 2000,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        self.base * self.rate.powi((step / self.interval.max(1)) as i32)
    }
}

pub fn lr_schedule(step: u64) -> f64 {
    LrSchedule::default().at(step)
}
