use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::PPOConfig;
use super::trajectory::{compute_gae, normalize_advantages, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, Var};
use crate::policy::{entropy_graph, log_prob_graph, BatchInput, Policy};
use crate::rng::Rng;

/// A transition with its normalized advantage and return target.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'t> {
    pub step: &'t Transition,
    pub asset: usize,
    pub advantage: f64,
    pub ret: f64,
}

/// GAE per trajectory, then batch-wide advantage normalization.
pub fn build_samples<'t>(trajectories: &'t [Trajectory], cfg: &PPOConfig) -> Vec<Sample<'t>> {
    let mut out = Vec::new();
    let mut adv_all = Vec::new();
    for t in trajectories {
        let (adv, ret) = compute_gae(
            &t.rewards(),
            &t.values(),
            &t.dones(),
            cfg.gamma,
            cfg.gae_lambda,
            cfg.reward_scale,
        );
        for (step, (a, r)) in t.steps.iter().zip(adv.into_iter().zip(ret)) {
            adv_all.push(a);
            out.push(Sample {
                step,
                asset: t.meta.asset,
                advantage: a,
                ret: r,
            });
        }
    }
    normalize_advantages(&mut adv_all);
    for (s, a) in out.iter_mut().zip(adv_all) {
        s.advantage = a;
    }
    out
}

/// Per-sample clipped surrogate `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Largest |ρ − 1| in the first minibatch of the first epoch.
    pub first_ratio_deviation: f64,
    pub minibatches: usize,
}

pub struct MinibatchLoss {
    pub total: Var,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub ratios: Vec<f64>,
}

/// Builds the PPO loss of one minibatch on `g`.
pub fn minibatch_loss(
    policy: &Policy,
    g: &mut Graph,
    batch: &[Sample],
    cfg: &PPOConfig,
) -> Result<MinibatchLoss> {
    let c = policy.config();
    let n = batch.len();
    let mut obs = Vec::with_capacity(n * c.n_d * c.input_width);
    let mut mem = Vec::with_capacity(n * c.tau * c.n_m);
    let (mut lens, mut assets, mut raw) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::new());
    for s in batch {
        obs.extend_from_slice(&s.step.observation);
        mem.extend_from_slice(&s.step.memory);
        lens.push(s.step.memory_len);
        assets.push(s.asset);
        raw.extend_from_slice(&s.step.raw);
    }
    let f = policy.forward(
        g,
        &BatchInput {
            obs: &obs,
            memory: &mem,
            memory_len: &lens,
            assets: &assets,
        },
    )?;
    let lp = log_prob_graph(g, f.mu, f.log_std, &raw, &f.seg, n)?;
    let old = g.input(&[n], batch.iter().map(|s| s.step.log_prob).collect())?;
    let adv = g.input(&[n], batch.iter().map(|s| s.advantage).collect())?;
    let ret = g.input(&[n], batch.iter().map(|s| s.ret).collect())?;
    let d = g.sub(lp, old)?;
    let ratio = g.exp(d);
    let s1 = g.mul(ratio, adv)?;
    let rc = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let s2 = g.mul(rc, adv)?;
    let surr = g.minimum(s1, s2)?;
    let surr = g.mean(surr);
    let pl = g.scale(surr, -1.0);
    let e = g.sub(f.value, ret)?;
    let e2 = g.mul(e, e)?;
    let vl = g.mean(e2);
    let ent = entropy_graph(g, f.log_std, &f.seg, n)?;
    let ent = g.mean(ent);
    let a = g.scale(vl, cfg.value_coeff);
    let b = g.scale(ent, -cfg.entropy_coeff);
    let t = g.add(pl, a)?;
    let total = g.add(t, b)?;
    Ok(MinibatchLoss {
        total,
        policy: g.scalar(pl),
        value: g.scalar(vl),
        entropy: g.scalar(ent),
        ratios: g.value(ratio).to_vec(),
    })
}

/// Epochs of shuffled minibatch Adam steps. A non-finite loss or gradient
/// aborts with [`Error::Training`]; the caller restores its snapshot.
pub fn ppo_update(
    policy: &mut Policy,
    adam: &mut Adam,
    samples: &[Sample],
    cfg: &PPOConfig,
    lr: f64,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    if samples.is_empty() {
        return Ok(stats);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let (mut kl_sum, mut clipped, mut seen) = (0.0, 0usize, 0usize);
    for epoch in 0..cfg.epochs_per_iter {
        order.shuffle(rng);
        for (mb, idx) in order.chunks(cfg.minibatch).enumerate() {
            let batch: Vec<Sample> = idx.iter().map(|&i| samples[i]).collect();
            let (loss, mut grads) = {
                let mut g = Graph::new(&policy.store);
                let loss = minibatch_loss(policy, &mut g, &batch, cfg)?;
                let total = g.scalar(loss.total);
                if !total.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss {total} at epoch {epoch}"
                    )));
                }
                let grads = g.backward(loss.total)?;
                (loss, grads)
            };
            if !grads.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient at epoch {epoch}"
                )));
            }
            let norm = grads.norm();
            if let Some(max) = cfg.max_grad_norm {
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            adam.update(&mut policy.store, &grads, lr)?;
            if epoch == 0 && mb == 0 {
                stats.first_ratio_deviation = loss
                    .ratios
                    .iter()
                    .fold(0.0f64, |m, r| m.max((r - 1.0).abs()));
            }
            for r in &loss.ratios {
                kl_sum += r - 1.0 - r.ln();
                clipped += usize::from((r - 1.0).abs() > cfg.clip);
            }
            seen += loss.ratios.len();
            stats.policy_loss += loss.policy;
            stats.value_loss += loss.value;
            stats.entropy += loss.entropy;
            stats.total_loss +=
                loss.policy + cfg.value_coeff * loss.value - cfg.entropy_coeff * loss.entropy;
            stats.grad_norm += norm;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.total_loss /= m;
    stats.grad_norm /= m;
    stats.approx_kl = kl_sum / seen as f64;
    stats.clip_fraction = clipped as f64 / seen as f64;
    Ok(stats)
}
