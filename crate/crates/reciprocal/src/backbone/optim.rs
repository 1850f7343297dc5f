//! Adaptive-moment (Adam) parameter updates with bias correction.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus a shared step
/// counter. Updates are dense: every parameter is touched on every step,
/// so accumulated moments keep decaying even where the current gradient
/// is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(param_len: usize, config: AdamConfig) -> OptimizerState {
        OptimizerState {
            config,
            first: vec![0.0; param_len],
            second: vec![0.0; param_len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// One descent step in place. `params` and `grad` must both match the
    /// state's parameter length.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.first.len(), "parameter length mismatch");
        assert_eq!(grad.len(), self.first.len(), "gradient length mismatch");
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - c.beta1.powi(t);
        let correction2 = 1.0 - c.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.first[i] = c.beta1 * self.first[i] + (1.0 - c.beta1) * g;
            self.second[i] = c.beta2 * self.second[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.first[i] / correction1;
            let v_hat = self.second[i] / correction2;
            params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_size_is_close_to_learning_rate() {
        // With bias correction the very first update is lr * g/(|g| + eps).
        let mut opt = OptimizerState::new(1, AdamConfig::with_learning_rate(0.05));
        let mut params = vec![0.0];
        opt.apply(&mut params, &[3.7]);
        assert!((params[0] + 0.05).abs() < 1e-6, "got {}", params[0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        // f(p) = (p - 3)^2, gradient 2(p - 3).
        let mut opt = OptimizerState::new(1, AdamConfig::with_learning_rate(0.1));
        let mut params = vec![-4.0];
        for _ in 0..500 {
            let grad = vec![2.0 * (params[0] - 3.0)];
            opt.apply(&mut params, &grad);
        }
        assert!((params[0] - 3.0).abs() < 1e-2, "got {}", params[0]);
    }

    #[test]
    fn zero_gradient_leaves_fresh_state_unchanged() {
        let mut opt = OptimizerState::new(3, AdamConfig::default());
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        opt.apply(&mut params, &[0.0, 0.0, 0.0]);
        assert_eq!(params, before);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut opt = OptimizerState::new(2, AdamConfig::default());
            let mut params = vec![0.3, -0.3];
            for i in 0..50 {
                let grad = vec![(i as f64).sin(), (i as f64).cos()];
                opt.apply(&mut params, &grad);
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    #[should_panic(expected = "gradient length mismatch")]
    fn mismatched_gradient_length_panics() {
        let mut opt = OptimizerState::new(2, AdamConfig::default());
        let mut params = vec![0.0, 0.0];
        opt.apply(&mut params, &[1.0]);
    }
}
