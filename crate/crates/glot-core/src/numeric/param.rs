//! Trainable parameters and the Adam update.

use serde::{Deserialize, Serialize};

use crate::numeric::matrix::Matrix;

/// One trainable tensor with its gradient and Adam moment buffers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub adam_m: Matrix,
    pub adam_v: Matrix,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.value.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Self(i)
    }
}

/// Flat registry of all trainable tensors of a model. Handles are stable
/// for the lifetime of the store; registration order is the serialization
/// order, which keeps runs reproducible.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].grad
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of trainable scalars.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(Parameter::n_scalars).sum()
    }

    /// `(name, Frobenius norm)` per parameter, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.norm()))
            .collect()
    }

    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        adam_step(&mut self.params, cfg);
    }
}

/// Adam hyperparameters. Defaults are lr 2e-4, betas 0.9/0.999, eps 1e-8,
/// no weight decay.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam update applied in place. Gradients are zeroed
/// afterwards and each parameter's step counter advances by one.
pub fn adam_step(params: &mut [Parameter], cfg: &AdamConfig) {
    for p in params {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for k in 0..p.value.len() {
            let mut g = p.grad.data()[k];
            if cfg.weight_decay != 0.0 {
                g += cfg.weight_decay * p.value.data()[k];
            }
            let m = cfg.beta1 * p.adam_m.data()[k] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * p.adam_v.data()[k] + (1.0 - cfg.beta2) * g * g;
            p.adam_m.data_mut()[k] = m;
            p.adam_v.data_mut()[k] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            p.value.data_mut()[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        p.grad.fill(0.0);
    }
}
