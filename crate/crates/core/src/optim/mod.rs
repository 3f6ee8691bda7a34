//! First-order optimizers, the SAM wrapper and the alternating training loop.

mod train;

pub use train::{train, EpochRecord, LrRule, SamTargets, TrainConfig, TrainedModel};

use serde::{Deserialize, Serialize};

use crate::autodiff::norm;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam()
    }
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd() -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, ..OptimizerConfig::adam() }
    }

    pub fn validate(&self) -> Result<()> {
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !betas_ok || !(self.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Optimizer state for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl OptState {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        let moments = if config.kind == OptimizerKind::Adam { n_params } else { 0 };
        OptState { config, m: vec![0.0; moments], v: vec![0.0; moments], step_count: 0 }
    }

    pub fn sgd(n_params: usize) -> Self {
        OptState::new(OptimizerConfig::sgd(), n_params)
    }

    pub fn adam(n_params: usize) -> Self {
        OptState::new(OptimizerConfig::adam(), n_params)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.config.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies the configured base optimizer in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        match self.config.kind {
            OptimizerKind::Sgd => {
                sgd_step(params, grads, lr)?;
                self.step_count += 1;
                Ok(())
            }
            OptimizerKind::Adam => adam_step(params, grads, self, lr),
        }
    }
}

fn check_step(params: &[f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("optimizer", format!("{} params vs {} grads", params.len(), grads.len())));
    }
    if !(lr >= 0.0) {
        return Err(Error::usage(format!("learning rate must be ≥ 0, got {lr}")));
    }
    Ok(())
}

/// `ψ ← ψ − lr·g`
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    check_step(params, grads, lr)?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Adam with bias correction; `state.step_count` counts from 1 at the first
/// update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptState, lr: f64) -> Result<()> {
    check_step(params, grads, lr)?;
    if state.m.len() != params.len() {
        return Err(Error::shape("adam", format!("state sized for {} params, got {}", state.m.len(), params.len())));
    }
    let OptimizerConfig { beta1, beta2, eps, .. } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Sharpness-aware step: evaluates the gradient at `ψ + rho·g/‖g‖` and
/// hands it to the base optimizer at `ψ`. With `rho == 0`, or a zero
/// gradient, this is exactly one base step with `g`.
pub fn sam_step<F>(mut grad: F, params: &mut [f64], state: &mut OptState, lr: f64, rho: f64) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(rho >= 0.0) {
        return Err(Error::usage(format!("SAM radius must be ≥ 0, got {rho}")));
    }
    let g = grad(params)?;
    let g_norm = norm(&g);
    let g_used = if rho > 0.0 && g_norm > 0.0 {
        let shifted: Vec<f64> = params.iter().zip(&g).map(|(p, gi)| p + rho * gi / g_norm).collect();
        grad(&shifted)?
    } else {
        g
    };
    state.step(params, &g_used, lr)
}
