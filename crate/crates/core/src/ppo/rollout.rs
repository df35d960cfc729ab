use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trajectory::{EpisodeMeta, Trajectory, Transition};
use crate::economics::EconParams;
use crate::environment::{Episode, EpisodeConfig, InputLayout, TraceRow};
use crate::error::{arg, Error, Result};
use crate::geostat::{AssetSpec, RealizationSet};
use crate::policy::{sample_action, BatchInput, Inference, Memory, Policy};
use crate::rng::{rng_for, Rng};
use crate::simulator::SimConfig;

/// Samples per inference call; fixed so results do not depend on the worker
/// count.
const INFER_CHUNK: usize = 16;

/// Assets, ensembles and settings shared by every episode of a run.
pub struct EnvSet<'a> {
    pub assets: Vec<AssetSpec>,
    pub ensembles: Vec<&'a RealizationSet>,
    pub layout: InputLayout,
    pub sim: SimConfig,
    pub econ: EconParams,
}

impl<'a> EnvSet<'a> {
    pub fn new(
        assets: Vec<AssetSpec>,
        ensembles: Vec<&'a RealizationSet>,
        n_d: usize,
        sim: SimConfig,
        econ: EconParams,
    ) -> Result<Self> {
        if assets.len() != ensembles.len() {
            return arg(format!(
                "{} assets but {} ensembles",
                assets.len(),
                ensembles.len()
            ));
        }
        for (a, e) in assets.iter().zip(&ensembles) {
            if e.dims != (a.nx, a.ny, a.nz) {
                return arg(format!(
                    "ensemble dims {:?} do not match asset {}",
                    e.dims, a.name
                ));
            }
        }
        let layout = InputLayout::new(&assets, n_d)?;
        Ok(Self {
            assets,
            ensembles,
            layout,
            sim,
            econ,
        })
    }

    pub fn reset(&self, job: &EpisodeJob) -> Result<(Episode, Vec<f64>)> {
        let ens = self
            .ensembles
            .get(job.asset)
            .ok_or_else(|| Error::Argument(format!("asset index {} outside the run", job.asset)))?;
        let field = ens.fields.get(job.realization).ok_or_else(|| {
            Error::Argument(format!(
                "realization {} outside the ensemble",
                job.realization
            ))
        })?;
        let cfg = EpisodeConfig::new(
            job.asset,
            job.realization,
            job.epsilon_c,
            job.allow_early_termination,
        );
        Episode::reset(
            &self.assets[job.asset],
            field,
            &self.layout,
            cfg,
            &self.sim,
            self.econ,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeJob {
    pub asset: usize,
    pub realization: usize,
    pub epsilon_c: f64,
    pub allow_early_termination: bool,
    /// Seed of the episode's action-sampling stream.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailedEpisode {
    pub job: EpisodeJob,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Rollout {
    /// Completed trajectories, in job order.
    pub trajectories: Vec<Trajectory>,
    pub failed: Vec<FailedEpisode>,
}

/// A reset episode and its first observation.
type Started = (Episode, Vec<f64>);

struct Live {
    job: EpisodeJob,
    episode: Episode,
    observation: Vec<f64>,
    memory: Memory,
    rng: Rng,
    steps: Vec<Transition>,
    failed: Option<String>,
}

fn infer_chunked(policy: &Policy, lives: &[&mut Live]) -> Result<Vec<Inference>> {
    let c = policy.config();
    let chunks: Vec<&[&mut Live]> = lives.chunks(INFER_CHUNK).collect();
    let out: Result<Vec<Vec<Inference>>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut obs = Vec::with_capacity(chunk.len() * c.n_d * c.input_width);
            let mut mem = Vec::with_capacity(chunk.len() * c.tau * c.n_m);
            let mut lens = Vec::with_capacity(chunk.len());
            let mut assets = Vec::with_capacity(chunk.len());
            for l in chunk.iter() {
                obs.extend_from_slice(&l.observation);
                l.memory.write_padded(&mut mem);
                lens.push(l.memory.len());
                assets.push(l.job.asset);
            }
            policy.infer(&BatchInput {
                obs: &obs,
                memory: &mem,
                memory_len: &lens,
                assets: &assets,
            })
        })
        .collect();
    Ok(out?.into_iter().flatten().collect())
}

/// Runs every job to completion in lockstep: one batched policy evaluation
/// per control step across the live episodes, then parallel simulation.
/// Episodes whose simulation fails are dropped and reported.
pub fn collect_rollouts(
    policy: &Policy,
    env: &EnvSet,
    jobs: &[EpisodeJob],
    deterministic: bool,
) -> Result<Rollout> {
    Ok(run_lockstep(policy, env, jobs, deterministic, false)?.0)
}

fn run_lockstep(
    policy: &Policy,
    env: &EnvSet,
    jobs: &[EpisodeJob],
    deterministic: bool,
    keep_traces: bool,
) -> Result<(Rollout, Vec<Vec<TraceRow>>)> {
    let c = policy.config();
    if policy.arch.layout != env.layout {
        return arg("policy layout does not match the environment set");
    }
    let started: Vec<(EpisodeJob, Result<Started>)> =
        jobs.par_iter().map(|job| (*job, env.reset(job))).collect();
    let mut lives = Vec::with_capacity(jobs.len());
    let mut failed = Vec::new();
    for (job, s) in started {
        match s {
            Ok((episode, observation)) => lives.push(Live {
                job,
                episode,
                observation,
                memory: Memory::new(c.tau, c.n_m),
                rng: rng_for(job.seed, &[0xAC7]),
                steps: Vec::new(),
                failed: None,
            }),
            // Bad jobs are caller errors, not simulation failures.
            Err(e @ Error::Argument(_)) => return Err(e),
            Err(e) => {
                warn!("episode {job:?} failed at reset: {e}");
                failed.push(FailedEpisode {
                    job,
                    message: e.to_string(),
                });
            }
        }
    }
    loop {
        let mut active: Vec<&mut Live> = lives
            .iter_mut()
            .filter(|l| l.failed.is_none() && !l.episode.is_done())
            .collect();
        if active.is_empty() {
            break;
        }
        let outputs = infer_chunked(policy, &active)?;
        for (l, out) in active.iter_mut().zip(outputs) {
            let s = sample_action(&out.mu, &out.log_std, deterministic, &mut l.rng)?;
            let mut memory = Vec::with_capacity(c.tau * c.n_m);
            l.memory.write_padded(&mut memory);
            l.steps.push(Transition {
                observation: std::mem::take(&mut l.observation),
                memory,
                memory_len: l.memory.len(),
                action: s.action,
                raw: s.raw,
                log_prob: s.log_prob,
                reward: 0.0,
                value: out.value,
                done: false,
            });
            l.memory.push(out.state)?;
        }
        active.par_iter_mut().for_each(|l| {
            let last = l.steps.last_mut().expect("step pushed above");
            match l.episode.step(&last.action) {
                Ok(o) => {
                    last.reward = o.reward;
                    last.done = o.done;
                    l.observation = o.observation;
                }
                Err(e) => l.failed = Some(e.to_string()),
            }
        });
    }
    let mut trajectories = Vec::with_capacity(lives.len());
    let mut traces = Vec::new();
    for l in lives {
        if let Some(message) = l.failed {
            warn!("episode {:?} dropped: {message}", l.job);
            failed.push(FailedEpisode {
                job: l.job,
                message,
            });
            continue;
        }
        trajectories.push(Trajectory {
            meta: EpisodeMeta {
                asset: l.job.asset,
                realization: l.job.realization,
                epsilon_c: l.job.epsilon_c,
                project_life_days: l.episode.project_life_days(),
            },
            steps: l.steps,
        });
        if keep_traces {
            traces.push(l.episode.trace().to_vec());
        }
    }
    Ok((
        Rollout {
            trajectories,
            failed,
        },
        traces,
    ))
}

/// Deterministic (mean-action) NPV of each job, in job order. Any failure
/// is an error.
pub fn evaluate_jobs(
    policy: &Policy,
    env: &EnvSet,
    jobs: &[EpisodeJob],
) -> Result<Vec<Trajectory>> {
    Ok(evaluate_traced(policy, env, jobs, false)?.0)
}

/// As [`evaluate_jobs`], optionally keeping each episode's report trace.
pub fn evaluate_traced(
    policy: &Policy,
    env: &EnvSet,
    jobs: &[EpisodeJob],
    keep_traces: bool,
) -> Result<(Vec<Trajectory>, Vec<Vec<TraceRow>>)> {
    let (r, traces) = run_lockstep(policy, env, jobs, true, keep_traces)?;
    if let Some(f) = r.failed.first() {
        return Err(Error::Simulation {
            time: 0.0,
            message: format!("evaluation episode {:?}: {}", f.job, f.message),
        });
    }
    Ok((r.trajectories, traces))
}
