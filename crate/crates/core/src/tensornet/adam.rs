use serde::{Deserialize, Serialize};

use super::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates and the number of updates applied.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![T::zero(); len], v: vec![T::zero(); len], step: 0 }
    }
}

/// One bias-corrected Adam update of `value` in place.
pub fn adam_step<T: Real>(value: &mut [T], grad: &[T], state: &mut AdamState<T>, cfg: &AdamConfig) {
    assert_eq!(value.len(), grad.len(), "adam: gradient length mismatch");
    assert_eq!(value.len(), state.m.len(), "adam: state length mismatch");
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let c1 = T::lit(1.0 / (1.0 - cfg.beta1.powi(t)));
    let c2 = T::lit(1.0 / (1.0 - cfg.beta2.powi(t)));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for (((p, &g), m), v) in value.iter_mut().zip(grad).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let mhat = *m * c1;
        let vhat = *v * c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// A trainable tensor with its accumulated gradient and optimizer state.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam: AdamState<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let adam = AdamState::new(value.len());
        Param { name: name.into(), value, grad, adam }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn accumulate(&mut self, g: &[T]) {
        assert_eq!(g.len(), self.grad.len(), "gradient length mismatch for {}", self.name);
        self.grad.data_mut().iter_mut().zip(g).for_each(|(a, &b)| *a += b);
    }

    pub fn step(&mut self, cfg: &AdamConfig) {
        let Param { value, grad, adam, .. } = self;
        adam_step(value.data_mut(), grad.data(), adam, cfg);
    }
}
