//! Adam with moment accumulators keyed per named parameter block.
//!
//! Keys let a caller keep persistent moments for parameters that live across
//! steps (kernel hyperparameters, noise) while resetting the slot of a
//! parameter that is new each step (the newest inducing point in AGP).

use std::collections::BTreeMap;

/// Learning rate used for every Adam run unless configured otherwise.
pub const DEFAULT_LR: f64 = 0.05;

pub const KEY_LOG_NOISE: &str = "log_noise";
pub const KEY_LOG_VARIANCE: &str = "log_variance";
pub const KEY_LOG_LENGTHSCALE: &str = "log_lengthscale";
pub const KEY_INDUCING: &str = "inducing";
pub const KEY_NEWEST_INDUCING: &str = "inducing_newest";
pub const KEY_Q_MEAN: &str = "q_mean";
pub const KEY_Q_CHOL: &str = "q_chol";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: DEFAULT_LR, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    slots: BTreeMap<String, Moments>,
}

/// Fresh optimizer with standard betas and epsilon.
pub fn adam_params(lr: f64) -> OptimizerState {
    OptimizerState::new(AdamConfig { lr, ..AdamConfig::default() })
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, slots: BTreeMap::new() }
    }

    /// One descent step on `params` for the slot `key`. A slot whose length
    /// changed since the last call starts over with zero moments.
    pub fn step(&mut self, key: &str, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len(), "parameter/gradient length mismatch for {key}");
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let slot = self.slots.entry(key.to_string()).or_insert_with(|| Moments::zeros(params.len()));
        if slot.m.len() != params.len() {
            *slot = Moments::zeros(params.len());
        }
        slot.t += 1;
        let bc1 = 1.0 - beta1.powi(slot.t as i32);
        let bc2 = 1.0 - beta2.powi(slot.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
            slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// Scalar convenience wrapper around [`OptimizerState::step`].
    pub fn step_scalar(&mut self, key: &str, param: &mut f64, grad: f64) {
        let mut p = [*param];
        self.step(key, &mut p, &[grad]);
        *param = p[0];
    }

    pub fn reset(&mut self, key: &str) {
        self.slots.remove(key);
    }

    /// Number of updates applied to `key` since it was created or reset.
    pub fn steps(&self, key: &str) -> u64 {
        self.slots.get(key).map_or(0, |s| s.t)
    }
}
