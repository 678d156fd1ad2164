//! Adam optimizer with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::model::MilModel;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub params: AdamParams,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &MilModel<T>, learning_rate: f64, params: AdamParams) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
        let zeros = || shapes.iter().map(|&n| vec![T::zero(); n]).collect();
        Self { learning_rate, params, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, model: &mut MilModel<T>, grads: &MilModel<T>) {
        self.step += 1;
        let AdamParams { beta1, beta2, epsilon } = self.params;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let lr_t = T::lit(self.learning_rate * c2.sqrt() / c1);
        let eps_t = T::lit(epsilon * c2.sqrt());
        let grads = grads.tensors();
        for (((p, (_, g)), m), v) in model.tensors_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                p[i] -= lr_t * m[i] / (v[i].sqrt() + eps_t);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil::{ArchSpec, ModelConfig};

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = ModelConfig {
            arch: ArchSpec { input_size: 4, stem_pool: 1, channels: vec![1], feature_dim: 1 },
            attention_dim: 1,
        };
        let mut model = MilModel::<f64>::zeros(&cfg);
        let mut grads = model.zeros_like();
        grads.head.bias = vec![3.0, -0.5];
        let mut opt = Adam::new(&model, 0.01, AdamParams::default());
        opt.step(&mut model, &grads);
        // bias-corrected first step is lr·sign(g) up to epsilon
        assert!((model.head.bias[0] + 0.01).abs() < 1e-8);
        assert!((model.head.bias[1] - 0.01).abs() < 1e-8);
        assert_eq!(model.head.weights, vec![0.0; 2]);
        assert_eq!(opt.steps_taken(), 1);
    }
}
