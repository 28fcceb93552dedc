use serde::{Deserialize, Serialize};

use crate::neural::{ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Element-wise clip applied to raw gradients before the moment update.
    pub clip: (f64, f64),
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, clip: (-5.0, 5.0) }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        Self { first: zeros.clone(), second: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }
}

/// Clips the accumulated gradients, updates the moments with bias correction
/// and moves every parameter in the ascent direction. Gradients are zeroed
/// afterwards.
pub fn optimizer_step(store: &mut ParamStore, state: &mut AdamState, config: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - config.beta1.powi(t);
    let correction2 = 1.0 - config.beta2.powi(t);
    let (lo, hi) = config.clip;
    let (values, grads) = store.values_and_grads_mut();
    for (k, (value, grad)) in values.iter_mut().zip(grads.iter_mut()).enumerate() {
        let m = state.first[k].data_mut();
        let v = state.second[k].data_mut();
        for (((p, g), m), v) in value.data_mut().iter_mut().zip(grad.data_mut()).zip(m).zip(v) {
            let clipped = g.clamp(lo, hi);
            *m = config.beta1 * *m + (1.0 - config.beta1) * clipped;
            *v = config.beta2 * *v + (1.0 - config.beta2) * clipped * clipped;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p += config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            *g = 0.0;
        }
    }
}
