//! Bias-corrected adaptive-moment optimizer with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        OptimizerState {
            config,
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters, reading each tensor's grad buffer.
    /// Decoupled decay is applied as `p *= 1 - lr*wd` before the adaptive
    /// step. Aborts on non-finite gradients.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        self.step_with_lr(params, self.config.learning_rate)
    }

    /// Same as [`step`](Self::step) but with an externally scheduled
    /// learning rate.
    pub fn step_with_lr(&mut self, params: &mut [Tensor], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} parameters, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);

        for (idx, p) in params.iter_mut().enumerate() {
            let grad = match p.grad() {
                Some(g) => g.to_vec(),
                None => continue,
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in parameter {} at optimizer step {}",
                    idx, self.step
                )));
            }
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            let data = p.data_mut();
            let decay = 1.0 - lr * c.weight_decay;
            for i in 0..data.len() {
                data[i] *= decay;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}
