use serde::{Deserialize, Serialize};

use super::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with a constant learning rate and bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u32,
}

impl Adam {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self {
            config,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// One update of a flat parameter buffer.
    pub fn step_slice(&mut self, params: &mut [f32], grads: &[f32]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let (b1c, b2c) = self.corrections();
        Self::update(&self.config, b1c, b2c, params, grads, &mut self.m, &mut self.v);
    }

    /// One update of every buffer in `params`, with gradients laid out like `grads`.
    pub fn step<P: ParamSet + ?Sized, G: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &G) {
        let flat = grads.flatten();
        assert_eq!(flat.len(), self.m.len());
        self.t += 1;
        let (b1c, b2c) = self.corrections();
        let mut offset = 0;
        let config = self.config;
        let (m, v) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |p| {
            let n = p.len();
            let range = offset..offset + n;
            Self::update(&config, b1c, b2c, p, &flat[range.clone()], &mut m[range.clone()], &mut v[range]);
            offset += n;
        });
    }

    fn corrections(&self) -> (f32, f32) {
        let t = self.t as i32;
        (
            1.0 - self.config.beta1.powi(t),
            1.0 - self.config.beta2.powi(t),
        )
    }

    fn update(
        c: &AdamConfig,
        b1c: f32,
        b2c: f32,
        params: &mut [f32],
        grads: &[f32],
        m: &mut [f32],
        v: &mut [f32],
    ) {
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = m[i] / b1c;
            let v_hat = v[i] / b2c;
            params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
}
