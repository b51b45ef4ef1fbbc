use serde::{Deserialize, Serialize};

use crate::nn::ParamTensors;

/// Adam with linear warmup to a constant learning rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, warmup_steps: usize) -> Self {
        Self { learning_rate, warmup_steps, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate used by the `t`-th update (1-based).
    pub fn rate_at(&self, t: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * (t as f64 / self.warmup_steps as f64).min(1.0)
        }
    }

    /// Applies one update and returns the learning rate used.
    pub fn update<P: ParamTensors + ?Sized, G: ParamTensors + ?Sized>(&mut self, params: &mut P, grads: &G) -> f64 {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        assert_eq!(params.len(), grads.len(), "parameter and gradient layouts differ");
        if self.m.is_empty() {
            self.m = grads.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let lr = self.rate_at(self.step);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, ((_, p), (_, g))) in params.iter_mut().zip(&grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let step = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                p[i] -= step;
            }
        }
        lr
    }
}
