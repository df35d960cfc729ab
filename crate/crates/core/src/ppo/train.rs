use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::{info, warn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::PPOConfig;
use super::rollout::{collect_rollouts, EnvSet, EpisodeJob};
use super::update::{build_samples, ppo_update, UpdateStats};
use crate::container::TensorArchive;
use crate::error::{Error, Result};
use crate::geostat::{sample_global_batch, sample_training_batch, ClusterAssignment};
use crate::nn::{Adam, ParamStore};
use crate::policy::Policy;
use crate::rng::{derive_seed, rng_for};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Mean episode NPV (USD) over the iteration's completed episodes.
    pub expected_npv: f64,
    pub avg_project_life: f64,
    pub min_steps: usize,
    pub episodes: usize,
    pub failed: usize,
    /// Training simulations run so far, including this iteration.
    pub simulations: u64,
    pub lr: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub first_ratio_deviation: f64,
    pub aborted: bool,
}

pub fn write_training_log(rows: &[IterationLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_log(path: &Path) -> Result<Vec<IterationLog>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Consecutive aborted iterations tolerated before training gives up.
const MAX_CONSECUTIVE_ABORTS: usize = 3;

pub struct Trainer {
    pub policy: Policy,
    pub adam: Adam,
    pub cfg: PPOConfig,
    pub seed: u64,
    /// Completed iterations.
    pub iteration: usize,
    pub simulations: u64,
    pub log: Vec<IterationLog>,
    /// Every training episode drawn so far.
    pub batches: Vec<BatchEntry>,
}

/// One training episode as recorded in the batch log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub iteration: usize,
    pub asset: usize,
    pub realization: usize,
    pub epsilon_c: f64,
}

impl Trainer {
    pub fn new(policy: Policy, cfg: PPOConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(&policy.store);
        Ok(Self {
            policy,
            adam,
            cfg,
            seed,
            iteration: 0,
            simulations: 0,
            log: Vec::new(),
            batches: Vec::new(),
        })
    }

    /// Episodes for a 1-based iteration: `episodes_per_iter / k` draws from
    /// each cluster (pooled across assets in multi-asset runs), each with its
    /// own uniform ε_c.
    pub fn sample_jobs(
        &self,
        clusters: &[ClusterAssignment],
        iteration: usize,
    ) -> Result<Vec<EpisodeJob>> {
        let k = clusters.iter().map(ClusterAssignment::k).max().unwrap_or(0);
        if k == 0 || !self.cfg.episodes_per_iter.is_multiple_of(k) {
            return Err(Error::Config(format!(
                "episodes_per_iter {} is not a multiple of the {k} clusters",
                self.cfg.episodes_per_iter
            )));
        }
        let per = self.cfg.episodes_per_iter / k;
        let mut rng = rng_for(self.seed, &[iteration as u64, 0x5A3F]);
        let picks: Vec<(usize, usize)> = if clusters.len() == 1 {
            sample_training_batch(&clusters[0], per, &mut rng)
                .into_iter()
                .map(|r| (0, r))
                .collect()
        } else {
            sample_global_batch(clusters, per, &mut rng)
        };
        let allow = self.cfg.early_termination(iteration);
        Ok(picks
            .into_iter()
            .enumerate()
            .map(|(j, (asset, realization))| EpisodeJob {
                asset,
                realization,
                epsilon_c: rng.random::<f64>(),
                allow_early_termination: allow,
                seed: derive_seed(self.seed, &[iteration as u64, j as u64, 0xE9]),
            })
            .collect())
    }

    /// Collects rollouts and updates the policy once. An iteration with too
    /// many failed episodes or a non-finite loss leaves the parameters as they
    /// were and is logged as aborted.
    pub fn run_iteration(
        &mut self,
        env: &EnvSet,
        clusters: &[ClusterAssignment],
    ) -> Result<IterationLog> {
        if clusters.len() != env.assets.len() {
            return Err(Error::Argument(format!(
                "{} cluster assignments for {} assets",
                clusters.len(),
                env.assets.len()
            )));
        }
        let it = self.iteration + 1;
        let lr = self.cfg.lr(self.iteration);
        let jobs = self.sample_jobs(clusters, it)?;
        self.batches.extend(jobs.iter().map(|j| BatchEntry {
            iteration: it,
            asset: j.asset,
            realization: j.realization,
            epsilon_c: j.epsilon_c,
        }));
        let rollout = collect_rollouts(&self.policy, env, &jobs, false)?;
        self.simulations += jobs.len() as u64;
        let trajs = &rollout.trajectories;
        let n = trajs.len().max(1) as f64;
        let mut row = IterationLog {
            iteration: it,
            expected_npv: trajs.iter().map(|t| t.npv()).sum::<f64>() / n,
            avg_project_life: trajs.iter().map(|t| t.meta.project_life_days).sum::<f64>() / n,
            min_steps: trajs.iter().map(|t| t.len()).min().unwrap_or(0),
            episodes: trajs.len(),
            failed: rollout.failed.len(),
            simulations: self.simulations,
            lr,
            policy_loss: f64::NAN,
            value_loss: f64::NAN,
            entropy: f64::NAN,
            approx_kl: f64::NAN,
            clip_fraction: f64::NAN,
            grad_norm: f64::NAN,
            first_ratio_deviation: f64::NAN,
            aborted: false,
        };
        let fail_frac = rollout.failed.len() as f64 / jobs.len() as f64;
        if fail_frac > self.cfg.max_failed_fraction {
            warn!(
                "iteration {it}: {} of {} episodes failed, skipping update",
                rollout.failed.len(),
                jobs.len()
            );
            row.aborted = true;
        } else {
            let samples = build_samples(trajs, &self.cfg);
            let snapshot = (self.policy.store.clone(), self.adam.clone());
            let mut rng = rng_for(self.seed, &[it as u64, 0x0B7]);
            match ppo_update(
                &mut self.policy,
                &mut self.adam,
                &samples,
                &self.cfg,
                lr,
                &mut rng,
            ) {
                Ok(s) => fill_stats(&mut row, &s),
                Err(Error::Training(msg)) => {
                    warn!("iteration {it}: {msg}; restoring parameters");
                    self.policy.store = snapshot.0;
                    self.adam = snapshot.1;
                    row.aborted = true;
                }
                Err(e) => return Err(e),
            }
        }
        self.iteration = it;
        info!(
            "iter {it}: npv {:.4e} life {:.0} d loss {:.4} kl {:.2e}",
            row.expected_npv, row.avg_project_life, row.policy_loss, row.approx_kl
        );
        self.log.push(row.clone());
        Ok(row)
    }

    /// Runs the remaining iterations. `on_eval` is called with the number
    /// of completed iterations before the first update, then every
    /// `eval_every` iterations and after the last one.
    pub fn train(
        &mut self,
        env: &EnvSet,
        clusters: &[ClusterAssignment],
        mut on_eval: impl FnMut(usize, &Policy) -> Result<()>,
    ) -> Result<()> {
        if self.iteration == 0 {
            on_eval(0, &self.policy)?;
        }
        let mut aborts = 0;
        while self.iteration < self.cfg.iterations {
            let row = self.run_iteration(env, clusters)?;
            aborts = if row.aborted { aborts + 1 } else { 0 };
            if aborts >= MAX_CONSECUTIVE_ABORTS {
                return Err(Error::Training(format!(
                    "{aborts} consecutive aborted iterations at {}",
                    self.iteration
                )));
            }
            if self.iteration.is_multiple_of(self.cfg.eval_every)
                || self.iteration == self.cfg.iterations
            {
                on_eval(self.iteration, &self.policy)?;
            }
        }
        Ok(())
    }

    /// Policy checkpoint plus optimizer moments at `<stem>.adam.bin`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        self.policy.save(stem, self.iteration as u64, self.seed)?;
        let (m, v) = self.adam.moments();
        let mut entries = vec![("step".to_string(), vec![1], vec![self.adam.step as f64])];
        entries.push((
            "simulations".to_string(),
            vec![1],
            vec![self.simulations as f64],
        ));
        for (p, (m, v)) in self.policy.store.iter().zip(m.iter().zip(v)) {
            entries.push((format!("m.{}", p.name), p.shape.clone(), m.clone()));
            entries.push((format!("v.{}", p.name), p.shape.clone(), v.clone()));
        }
        TensorArchive { entries }.write_to(BufWriter::new(File::create(adam_path(stem))?))
    }

    /// Resumes from [`Trainer::save`] output. A checkpoint without optimizer
    /// state restarts Adam from zero moments.
    pub fn resume(stem: &Path, cfg: PPOConfig, seed: u64) -> Result<Self> {
        let (policy, step) = Policy::load(stem)?;
        let mut t = Self::new(policy, cfg, seed)?;
        t.iteration = step as usize;
        let path = adam_path(stem);
        if path.exists() {
            let archive = TensorArchive::read_from(BufReader::new(File::open(&path)?))?;
            restore_adam(&mut t, &archive).map_err(|e| Error::Load {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(t)
    }
}

fn adam_path(stem: &Path) -> std::path::PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".adam.bin");
    s.into()
}

fn restore_adam(t: &mut Trainer, archive: &TensorArchive) -> Result<()> {
    let find = |name: &str| {
        archive
            .entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, d)| d.clone())
            .ok_or_else(|| Error::Argument(format!("optimizer tensor {name} missing")))
    };
    let store: &ParamStore = &t.policy.store;
    let mut m = Vec::with_capacity(store.len());
    let mut v = Vec::with_capacity(store.len());
    for p in store.iter() {
        let (mm, vv) = (
            find(&format!("m.{}", p.name))?,
            find(&format!("v.{}", p.name))?,
        );
        if mm.len() != p.data.len() || vv.len() != p.data.len() {
            return Err(Error::Argument(format!(
                "optimizer tensor {} has the wrong size",
                p.name
            )));
        }
        m.push(mm);
        v.push(vv);
    }
    let step = find("step")?[0] as u64;
    t.simulations = find("simulations")?[0] as u64;
    t.adam.set_moments(m, v, step)
}

fn fill_stats(row: &mut IterationLog, s: &UpdateStats) {
    row.policy_loss = s.policy_loss;
    row.value_loss = s.value_loss;
    row.entropy = s.entropy;
    row.approx_kl = s.approx_kl;
    row.clip_fraction = s.clip_fraction;
    row.grad_norm = s.grad_norm;
    row.first_ratio_deviation = s.first_ratio_deviation;
}
