//! Diagonal Gaussian action distribution: sampling, log-density and entropy
//! both as closed forms and as graph ops for training.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{arg, Result};
use crate::nn::{Graph, Var};
use crate::rng::Rng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `Σ [−(x−μ)²/(2σ²) − ln σ − ½ ln 2π]` with `σ = exp(log_std)`.
pub fn gaussian_log_prob(x: &[f64], mu: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(log_std)
        .map(|((&x, &m), &ls)| {
            let z = (x - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|&ls| ls + 0.5 + HALF_LN_2PI).sum()
}

/// Environment action plus the pre-clip sample used for the log-density.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub raw: Vec<f64>,
    pub log_prob: f64,
}

/// Stochastic sample, or `μ` when `deterministic`. Actions are clipped into
/// `[−1, 1]`; the log-density is taken at the unclipped value.
pub fn sample_action(
    mu: &[f64],
    log_std: &[f64],
    deterministic: bool,
    rng: &mut Rng,
) -> Result<ActionSample> {
    if mu.len() != log_std.len() {
        return arg(format!(
            "mu has {} entries, log_std {}",
            mu.len(),
            log_std.len()
        ));
    }
    let raw: Vec<f64> = if deterministic {
        mu.to_vec()
    } else {
        mu.iter()
            .zip(log_std)
            .map(|(&m, &ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.exp() * z
            })
            .collect()
    };
    let log_prob = gaussian_log_prob(&raw, mu, log_std);
    let action = raw.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Ok(ActionSample {
        action,
        raw,
        log_prob,
    })
}

/// Per-sample log-density `[B]` of flattened pair samples `raw`.
pub fn log_prob_graph(
    g: &mut Graph,
    mu: Var,
    log_std: Var,
    raw: &[f64],
    seg: &[usize],
    batch: usize,
) -> Result<Var> {
    let x = g.input(&[raw.len()], raw.to_vec())?;
    let d = g.sub(x, mu)?;
    let neg = g.scale(log_std, -1.0);
    let inv = g.exp(neg);
    let z = g.mul(d, inv)?;
    let z2 = g.mul(z, z)?;
    let a = g.scale(z2, -0.5);
    let b = g.sub(a, log_std)?;
    let per_pair = g.add_scalar(b, -HALF_LN_2PI);
    g.segment_sum(per_pair, seg, batch)
}

/// Per-sample entropy `[B]`.
pub fn entropy_graph(g: &mut Graph, log_std: Var, seg: &[usize], batch: usize) -> Result<Var> {
    let per_pair = g.add_scalar(log_std, 0.5 + HALF_LN_2PI);
    g.segment_sum(per_pair, seg, batch)
}
