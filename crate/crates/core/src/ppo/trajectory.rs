use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

/// One decision point with everything needed to replay its log-density.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Global input `n_d × width`.
    pub observation: Vec<f64>,
    /// Padded memory `tau × n_m` seen at this step.
    pub memory: Vec<f64>,
    pub memory_len: usize,
    /// Clipped action sent to the environment.
    pub action: Vec<f64>,
    /// Pre-clip Gaussian sample.
    pub raw: Vec<f64>,
    pub log_prob: f64,
    /// Step NPV in USD.
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub asset: usize,
    pub realization: usize,
    pub epsilon_c: f64,
    pub project_life_days: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: EpisodeMeta,
    pub steps: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Episode NPV in USD.
    pub fn npv(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }

    pub fn dones(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.done).collect()
    }

    pub fn validate(&self, max_steps: usize) -> Result<()> {
        if self.steps.is_empty() || self.steps.len() > max_steps {
            return arg(format!(
                "trajectory has {} steps (max {max_steps})",
                self.steps.len()
            ));
        }
        if self.steps.iter().any(|s| !s.reward.is_finite()) {
            return arg("non-finite reward in trajectory");
        }
        let n = self.steps[0].action.len();
        if self
            .steps
            .iter()
            .any(|s| s.action.len() != n || s.raw.len() != n)
        {
            return arg("inconsistent action lengths in trajectory");
        }
        Ok(())
    }
}

/// Generalized advantage estimates and returns for one episode. The step
/// after the last one is treated as terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
    reward_scale: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] * reward_scale + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to zero mean and unit variance (population).
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n == 0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let inv = if var > 1e-24 { 1.0 / var.sqrt() } else { 1.0 };
    for a in adv {
        *a = (*a - mean) * inv;
    }
}
