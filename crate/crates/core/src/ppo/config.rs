use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PPOConfig {
    pub iterations: usize,
    pub epochs_per_iter: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    /// Multiplier applied to USD rewards before advantage estimation.
    pub reward_scale: f64,
    pub episodes_per_iter: usize,
    /// Early termination is honoured only after this many iterations.
    pub termination_warmup_iters: usize,
    pub eval_every: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// An iteration aborts when more than this fraction of episodes fail.
    pub max_failed_fraction: f64,
}

impl Default for PPOConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            epochs_per_iter: 10,
            minibatch: 128,
            clip: 0.2,
            lr_start: 1e-4,
            lr_end: 1e-5,
            gae_lambda: 0.95,
            gamma: 1.0,
            entropy_coeff: 0.003,
            value_coeff: 0.5,
            reward_scale: 1e-7,
            episodes_per_iter: 160,
            termination_warmup_iters: 100,
            eval_every: 10,
            max_grad_norm: Some(0.5),
            max_failed_fraction: 0.05,
        }
    }
}

impl PPOConfig {
    /// Single-asset defaults: 160 episodes per iteration.
    pub fn individual() -> Self {
        Self::default()
    }

    /// Multi-asset defaults: 200 episodes per iteration.
    pub fn global() -> Self {
        Self {
            episodes_per_iter: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip > 0.0) {
            return bad("clip must be > 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.iterations == 0
            || self.epochs_per_iter == 0
            || self.minibatch == 0
            || self.episodes_per_iter == 0
        {
            return bad("iterations, epochs, minibatch and episodes_per_iter must be >= 1");
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.reward_scale > 0.0) || self.entropy_coeff < 0.0 || self.value_coeff < 0.0 {
            return bad("reward_scale must be > 0 and loss coefficients >= 0");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1");
        }
        if matches!(self.max_grad_norm, Some(g) if !(g > 0.0)) {
            return bad("max_grad_norm must be > 0");
        }
        if !(0.0..=1.0).contains(&self.max_failed_fraction) {
            return bad("max_failed_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn lr(&self, iteration: usize) -> f64 {
        crate::nn::lr_schedule(iteration, self.iterations, self.lr_start, self.lr_end)
    }

    /// Whether episodes of a 1-based iteration may terminate early.
    pub fn early_termination(&self, iteration: usize) -> bool {
        iteration > self.termination_warmup_iters
    }
}

/// Training-simulation counts of `n_assets` individual runs against one
/// global run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimBudget {
    pub individual_total: u64,
    pub global_total: u64,
    pub ratio: f64,
}

pub fn sim_budget(n_assets: usize, individual: &PPOConfig, global: &PPOConfig) -> SimBudget {
    let individual_total = (n_assets * individual.episodes_per_iter * individual.iterations) as u64;
    let global_total = (global.episodes_per_iter * global.iterations) as u64;
    SimBudget {
        individual_total,
        global_total,
        ratio: global_total as f64 / individual_total as f64,
    }
}
