use serde::{Deserialize, Serialize};

use super::ParamTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &[&ParamTensor], config: AdamConfig) -> Self {
        Self {
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step_count: 0,
            config,
        }
    }

    pub fn for_tensors(params: &[ParamTensor], config: AdamConfig) -> Self {
        let refs: Vec<&ParamTensor> = params.iter().collect();
        Self::new(&refs, config)
    }
}

/// One bias-corrected Adam update of `params` from their accumulated gradients.
pub fn adam_step(params: &mut [&mut ParamTensor], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), state.first_moment.len(), "optimizer tracks a different parameter list");
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        assert_eq!(m.len(), p.len(), "moment shape differs from parameter {}", p.name);
        for i in 0..p.len() {
            let g = p.grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.values[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}
