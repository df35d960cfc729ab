use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::TraceRow;
use crate::error::{arg, Error, Result};
use crate::geostat::ClusterAssignment;
use crate::policy::Policy;
use crate::ppo::{evaluate_traced, EnvSet, EpisodeJob};

/// An (asset index, realization) pair.
pub type Case = (usize, usize);

/// The centroid member of every cluster of every asset, in asset then
/// cluster order. These realizations never enter a training batch.
pub fn test_set(clusters: &[ClusterAssignment]) -> Vec<Case> {
    clusters
        .iter()
        .enumerate()
        .flat_map(|(n, a)| a.centroid_members.iter().map(move |&r| (n, r)))
        .collect()
}

/// Deterministic test-set NPVs of one policy at one ε_c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub iteration: usize,
    pub epsilon_c: f64,
    pub cases: Vec<Case>,
    pub npvs: Vec<f64>,
    pub expected_npv: f64,
    pub selected: bool,
}

impl EvaluationRecord {
    pub fn asset_npvs(&self, asset: usize) -> Vec<f64> {
        self.cases
            .iter()
            .zip(&self.npvs)
            .filter(|((a, _), _)| *a == asset)
            .map(|(_, &v)| v)
            .collect()
    }

    pub fn asset_mean(&self, asset: usize) -> Option<f64> {
        let v = self.asset_npvs(asset);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn eval_jobs(cases: &[Case], epsilon_c: f64) -> Vec<EpisodeJob> {
    cases
        .iter()
        .map(|&(asset, realization)| EpisodeJob {
            asset,
            realization,
            epsilon_c,
            allow_early_termination: true,
            seed: 0,
        })
        .collect()
}

/// Runs every test case with mean actions. Traces are returned when asked
/// for, in case order.
pub fn evaluate_policy_traced(
    policy: &Policy,
    env: &EnvSet,
    cases: &[Case],
    epsilon_c: f64,
    iteration: usize,
    keep_traces: bool,
) -> Result<(EvaluationRecord, Vec<Vec<TraceRow>>)> {
    if cases.is_empty() {
        return arg("empty test set");
    }
    let (trajs, traces) = evaluate_traced(policy, env, &eval_jobs(cases, epsilon_c), keep_traces)?;
    let npvs: Vec<f64> = trajs.iter().map(|t| t.npv()).collect();
    let expected_npv = npvs.iter().sum::<f64>() / npvs.len() as f64;
    let record = EvaluationRecord {
        iteration,
        epsilon_c,
        cases: cases.to_vec(),
        npvs,
        expected_npv,
        selected: false,
    };
    Ok((record, traces))
}

pub fn evaluate_policy(
    policy: &Policy,
    env: &EnvSet,
    cases: &[Case],
    epsilon_c: f64,
    iteration: usize,
) -> Result<EvaluationRecord> {
    Ok(evaluate_policy_traced(policy, env, cases, epsilon_c, iteration, false)?.0)
}

/// Loads a checkpoint and evaluates it; the checkpoint's layout must match
/// the environment set.
pub fn evaluate_checkpoint(
    stem: &Path,
    env: &EnvSet,
    cases: &[Case],
    epsilon_c: f64,
) -> Result<EvaluationRecord> {
    let (policy, step) = Policy::load(stem)?;
    if policy.arch.layout != env.layout {
        return Err(Error::Load {
            path: stem.to_path_buf(),
            message: "checkpoint input layout does not match the configured assets".into(),
        });
    }
    evaluate_policy(&policy, env, cases, epsilon_c, step as usize)
}

/// Index of the record with the highest expected NPV; the earliest wins a tie.
pub fn select_optimal(records: &[EvaluationRecord]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if best.is_none_or(|b| r.expected_npv > records[b].expected_npv) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::Argument("no evaluation records to select from".into()))
}

/// Empirical CDF: sorted values with P(i) = i/N.
pub fn compute_cdf(npvs: &[f64]) -> Result<Vec<(f64, f64)>> {
    if npvs.is_empty() {
        return arg("cannot build a CDF from no values");
    }
    if npvs.iter().any(|v| !v.is_finite()) {
        return arg("CDF input contains a non-finite value");
    }
    let mut v = npvs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    Ok(v.into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect())
}
