use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use super::evaluate::{
    evaluate_policy, evaluate_policy_traced, select_optimal, test_set, EvaluationRecord,
};
use super::features::{FeatureProvider, ReferenceSimulation};
use super::report::{
    cluster_rows, clusters_from_rows, read_csv, render_reports, write_bhp_trace, write_cdfs,
    write_csv, write_evaluation, ClusterRow,
};
use crate::environment::{assign_well_ids, build_well_ids, WellIdTable};
use crate::error::{Error, Result};
use crate::geostat::{
    cluster_realizations, generate_realizations, AssetSpec, ClusterAssignment, RealizationSet,
};
use crate::policy::{Policy, PolicyConfig};
use crate::ppo::{write_training_log, EnvSet, SimBudget, Trainer};
use crate::rng::derive_seed;

/// Environment variable capping the worker pool.
pub const WORKERS_ENV: &str = "CLRM_WORKERS";

/// Outcome of one stage as recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: Option<u64>,
    pub stage: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub created: String,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub workers: usize,
    pub assets: Vec<String>,
    /// Global well IDs per asset, as used by a multi-asset policy.
    pub well_ids: WellIdTable,
    pub sim_budget: SimBudget,
    pub parameter_counts: Vec<(String, usize)>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    /// Manifest of a run that has not started any stage yet.
    pub fn new(cfg: &ExperimentConfig, workers: usize) -> Result<Self> {
        let mut assets = cfg.assets()?;
        let well_ids = assign_well_ids(&mut assets)?;
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").into(),
            created: chrono::Local::now().to_rfc3339(),
            mode: cfg.mode,
            seeds: cfg.seeds.clone(),
            config_hash: cfg.hash()?,
            workers,
            assets: assets.iter().map(|a| a.name.clone()).collect(),
            well_ids,
            sim_budget: cfg.sim_budget(assets.len()),
            parameter_counts: Vec::new(),
            stages: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One trained policy: its evaluation history and the ε_c sweep of the
/// selected checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRun {
    pub name: String,
    /// Indices into the run's asset list.
    pub assets: Vec<usize>,
    pub parameter_count: usize,
    pub records: Vec<EvaluationRecord>,
    pub selected: usize,
    pub sweeps: Vec<EvaluationRecord>,
}

impl PolicyRun {
    pub fn selected_record(&self) -> &EvaluationRecord {
        &self.records[self.selected]
    }

    /// Relative gain of the selected checkpoint over the untrained policy.
    pub fn improvement(&self) -> f64 {
        let base = self.records[0].expected_npv;
        (self.selected_record().expected_npv - base) / base.abs()
    }

    pub fn sweep(&self, epsilon_c: f64) -> Option<&EvaluationRecord> {
        self.sweeps.iter().find(|r| r.epsilon_c == epsilon_c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub policies: Vec<PolicyRun>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub seeds: Vec<SeedRun>,
}

/// Data shared by every policy of one seed.
pub struct Prepared {
    pub assets: Vec<AssetSpec>,
    pub sets: Vec<RealizationSet>,
    pub clusters: Vec<ClusterAssignment>,
}

/// Rayon pool sized by `CLRM_WORKERS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize =
            v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                Error::Config(format!("{WORKERS_ENV}={v} is not a positive integer"))
            })?;
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn realization_dir(dir: &Path, asset: &AssetSpec) -> PathBuf {
    dir.join("realizations").join(&asset.name)
}

fn clusters_path(dir: &Path, asset: &AssetSpec) -> PathBuf {
    dir.join(format!("clusters_{}.csv", asset.name))
}

/// Realizations for every configured asset. Sets already saved under
/// `dir/realizations/<asset>` are loaded; missing ones are generated and saved.
pub fn generate_data(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
) -> Result<(Vec<AssetSpec>, Vec<RealizationSet>)> {
    let mut assets = Vec::new();
    let mut sets = Vec::new();
    for spec in cfg.assets()? {
        let rdir = realization_dir(dir, &spec);
        if rdir.join("realizations.bin").exists() {
            let (loaded, set) = RealizationSet::load(&rdir)?;
            if set.len() != cfg.realizations {
                return Err(Error::Config(format!(
                    "{} holds {} realizations, config asks for {}",
                    rdir.display(),
                    set.len(),
                    cfg.realizations
                )));
            }
            assets.push(loaded);
            sets.push(set);
            continue;
        }
        let id = spec.asset_id as u64;
        let spec = spec.with_sampled_hard_data(derive_seed(seed, &[id, 0x4A7D]))?;
        let set = generate_realizations(&spec, cfg.realizations, derive_seed(seed, &[id, 0x6E0]))?;
        set.save(&spec, &rdir)?;
        info!(
            "generated {} realizations of asset {}",
            set.len(),
            spec.name
        );
        assets.push(spec);
        sets.push(set);
    }
    assign_well_ids(&mut assets)?;
    Ok((assets, sets))
}

/// Cluster assignments per asset, loaded from `clusters_<asset>.csv` when
/// present and computed from `provider` features otherwise.
pub fn cluster_data(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    assets: &[AssetSpec],
    sets: &[RealizationSet],
    provider: &dyn FeatureProvider,
) -> Result<Vec<ClusterAssignment>> {
    assets
        .iter()
        .zip(sets)
        .map(|(asset, set)| {
            let path = clusters_path(dir, asset);
            if path.exists() {
                let a = clusters_from_rows(&read_csv::<ClusterRow>(&path)?)?;
                if a.labels.len() != set.len() || a.k() != cfg.clusters {
                    return Err(Error::Config(format!(
                        "{} does not match the configured ensemble",
                        path.display()
                    )));
                }
                return Ok(a);
            }
            let features = provider.features(asset, set)?;
            let a = cluster_realizations(
                set,
                cfg.clusters,
                &features,
                derive_seed(seed, &[asset.asset_id as u64, 0xC1]),
            )?;
            write_csv(&cluster_rows(&a), &path)?;
            Ok(a)
        })
        .collect()
}

pub fn reference_provider(cfg: &ExperimentConfig) -> ReferenceSimulation {
    ReferenceSimulation {
        sim: cfg.sim.clone(),
        days: cfg.reference_days,
        reports: cfg.reference_reports,
    }
}

pub fn prepare(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    provider: &dyn FeatureProvider,
) -> Result<Prepared> {
    let (assets, sets) = generate_data(cfg, seed, dir)?;
    let clusters = cluster_data(cfg, seed, dir, &assets, &sets, provider)?;
    Ok(Prepared {
        assets,
        sets,
        clusters,
    })
}

/// The policies a run trains: one global policy or one per asset.
pub fn policy_groups(mode: Mode, assets: &[AssetSpec]) -> Vec<(String, Vec<usize>)> {
    match mode {
        Mode::Global => vec![("global".into(), (0..assets.len()).collect())],
        Mode::Individual => assets
            .iter()
            .enumerate()
            .map(|(n, a)| (format!("individual_{}", a.name), vec![n]))
            .collect(),
    }
}

/// Environment over a subset of the prepared assets. Assets keep their
/// global well IDs.
pub fn env_for<'a>(
    cfg: &ExperimentConfig,
    data: &'a Prepared,
    group: &[usize],
) -> Result<EnvSet<'a>> {
    EnvSet::new(
        group.iter().map(|&n| data.assets[n].clone()).collect(),
        group.iter().map(|&n| &data.sets[n]).collect(),
        cfg.n_d,
        cfg.sim.clone(),
        cfg.econ,
    )
}

fn new_policy(env: &EnvSet, mode: Mode, seed: u64) -> Result<Policy> {
    let wells = build_well_ids(&env.assets)?;
    let config = match mode {
        Mode::Global => PolicyConfig::global(&env.layout, &wells),
        Mode::Individual => PolicyConfig::individual(&env.layout, &wells),
    };
    Policy::new(config, wells, env.layout.clone(), seed)
}

/// Maps record cases from environment-local to run asset indices.
fn relabel(mut r: EvaluationRecord, group: &[usize]) -> EvaluationRecord {
    for c in &mut r.cases {
        c.0 = group[c.0];
    }
    r
}

/// Trains one policy, evaluates it at ε_c = 1 on the test set at every
/// evaluation point, then sweeps the selected checkpoint over the
/// configured ε_c values. Outputs go to `dir`.
pub fn train_policy(
    cfg: &ExperimentConfig,
    data: &Prepared,
    name: &str,
    group: &[usize],
    seed: u64,
    dir: &Path,
) -> Result<PolicyRun> {
    std::fs::create_dir_all(dir)?;
    let env = env_for(cfg, data, group)?;
    let local_clusters: Vec<ClusterAssignment> =
        group.iter().map(|&n| data.clusters[n].clone()).collect();
    let cases = test_set(&local_clusters);
    let ppo = cfg.ppo_for_mode();
    let trainer_seed = derive_seed(seed, &[0x71, group[0] as u64]);
    let mut trainer = match &cfg.resume_from {
        Some(stem) => {
            let t = Trainer::resume(stem, ppo, trainer_seed)?;
            if t.policy.arch.layout != env.layout {
                return Err(Error::Load {
                    path: stem.clone(),
                    message: "checkpoint input layout does not match the configured assets".into(),
                });
            }
            t
        }
        None => Trainer::new(
            new_policy(&env, cfg.mode, derive_seed(seed, &[0x70, group[0] as u64]))?,
            ppo,
            trainer_seed,
        )?,
    };
    let parameter_count = trainer.policy.parameter_count();
    info!(
        "training {name}: {parameter_count} parameters, {} test cases",
        cases.len()
    );

    let mut records: Vec<EvaluationRecord> = Vec::new();
    let mut best: Option<(usize, crate::nn::ParamStore)> = None;
    trainer.train(&env, &local_clusters, |iteration, policy| {
        let r = relabel(
            evaluate_policy(policy, &env, &cases, 1.0, iteration)?,
            group,
        );
        info!(
            "{name} iteration {iteration}: test NPV {:.4e}",
            r.expected_npv
        );
        if best
            .as_ref()
            .is_none_or(|(i, _)| r.expected_npv > records[*i].expected_npv)
        {
            best = Some((records.len(), policy.store.clone()));
        }
        records.push(r);
        Ok(())
    })?;
    write_training_log(&trainer.log, &dir.join("training_log.csv"))?;
    write_csv(&trainer.batches, &dir.join("training_batches.csv"))?;
    trainer.save(&dir.join("final"))?;

    let selected = select_optimal(&records)?;
    records[selected].selected = true;
    write_evaluation(name, &records, &dir.join("evaluation.csv"))?;

    let mut chosen = trainer.policy.clone();
    if let Some((i, store)) = best {
        debug_assert_eq!(i, selected);
        chosen.store = store;
    }
    let stem = dir.join("selected");
    chosen.save(&stem, records[selected].iteration as u64, trainer_seed)?;
    let (chosen, _) = Policy::load(&stem)?;

    let mut sweeps = Vec::new();
    let mut traces = Vec::new();
    for &eps in &cfg.eval_epsilons {
        let (r, t) = evaluate_policy_traced(
            &chosen,
            &env,
            &cases,
            eps,
            records[selected].iteration,
            eps == 1.0,
        )?;
        let mut r = relabel(r, group);
        r.selected = true;
        if eps == 1.0 {
            traces = t;
        }
        sweeps.push(r);
    }
    write_evaluation(name, &sweeps, &dir.join("sweep.csv"))?;
    write_cdfs(&sweeps, &data.assets, dir)?;
    let at_one = match sweeps.iter().find(|r| r.epsilon_c == 1.0) {
        Some(r) => r.clone(),
        None => {
            let (r, t) = evaluate_policy_traced(
                &chosen,
                &env,
                &cases,
                1.0,
                records[selected].iteration,
                true,
            )?;
            traces = t;
            relabel(r, group)
        }
    };
    for &n in group {
        write_bhp_trace(&at_one, &traces, n, &data.assets[n], dir)?;
    }
    render_reports(dir)?;
    Ok(PolicyRun {
        name: name.into(),
        assets: group.to_vec(),
        parameter_count,
        records,
        selected,
        sweeps,
    })
}

fn timestamped_dir(out: &Path, mode: Mode) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
    let base = out.join(format!("{stamp}-{}", mode.as_str()));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = PathBuf::from(format!("{}-{n}", base.display()));
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

struct ManifestWriter {
    manifest: RunManifest,
    path: PathBuf,
}

impl ManifestWriter {
    fn record<T>(&mut self, seed: Option<u64>, stage: &str, r: Result<T>) -> Result<T> {
        self.manifest.stages.push(StageRecord {
            seed,
            stage: stage.into(),
            ok: r.is_ok(),
            error: r.as_ref().err().map(|e| e.to_string()),
        });
        self.flush()?;
        r
    }

    fn flush(&self) -> Result<()> {
        std::fs::write(
            &self.path,
            serde_json::to_string_pretty(&self.manifest)? + "\n",
        )?;
        Ok(())
    }
}

/// Full pipeline under a fresh timestamped directory in `cfg.out`, run on
/// the `CLRM_WORKERS` pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let pool = worker_pool()?;
    let dir = timestamped_dir(&cfg.out, cfg.mode)?;
    pool.install(|| {
        run_in(
            cfg,
            &dir,
            &reference_provider(cfg),
            pool.current_num_threads(),
        )
    })
}

/// Pipeline body: writes into `dir` using features from `provider`.
pub fn run_in(
    cfg: &ExperimentConfig,
    dir: &Path,
    provider: &dyn FeatureProvider,
    workers: usize,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let mut w = ManifestWriter {
        manifest: RunManifest::new(cfg, workers)?,
        path: dir.join("manifest.json"),
    };
    w.flush()?;
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let sdir = dir.join(format!("seed_{seed}"));
        let (assets, sets) = w.record(Some(seed), "generate", generate_data(cfg, seed, &sdir))?;
        let clusters = w.record(
            Some(seed),
            "cluster",
            cluster_data(cfg, seed, &sdir, &assets, &sets, provider),
        )?;
        let data = Prepared {
            assets,
            sets,
            clusters,
        };
        let mut policies = Vec::new();
        for (name, group) in policy_groups(cfg.mode, &data.assets) {
            let r = train_policy(cfg, &data, &name, &group, seed, &sdir.join(&name));
            let run = w.record(Some(seed), &format!("train:{name}"), r)?;
            if !w.manifest.parameter_counts.iter().any(|(n, _)| *n == name) {
                w.manifest
                    .parameter_counts
                    .push((name.clone(), run.parameter_count));
                w.flush()?;
            }
            policies.push(run);
        }
        seeds.push(SeedRun { seed, policies });
    }
    Ok(ExperimentOutcome {
        dir: dir.to_path_buf(),
        manifest: w.manifest,
        seeds,
    })
}

/// Evaluates a saved checkpoint on the test set of the data in `dir` at
/// every configured ε_c. The checkpoint's assets are found by matching its
/// input layout against the configured asset groups. Results go to
/// `dir/evaluation_<checkpoint name>`.
pub fn evaluate_saved(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    stem: &Path,
) -> Result<Vec<EvaluationRecord>> {
    let data = prepare(cfg, seed, dir, &reference_provider(cfg))?;
    let (policy, step) = Policy::load(stem)?;
    let groups = policy_groups(Mode::Global, &data.assets)
        .into_iter()
        .chain(policy_groups(Mode::Individual, &data.assets));
    let mut found = None;
    for (name, group) in groups {
        let env = env_for(cfg, &data, &group)?;
        if env.layout == policy.arch.layout {
            found = Some((name, group, env));
            break;
        }
    }
    let (name, group, env) = found.ok_or_else(|| Error::Load {
        path: stem.to_path_buf(),
        message: "checkpoint layout matches none of the configured assets".into(),
    })?;
    let local: Vec<ClusterAssignment> = group.iter().map(|&n| data.clusters[n].clone()).collect();
    let cases = test_set(&local);
    let label = stem
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let out = dir.join(format!("evaluation_{label}"));
    std::fs::create_dir_all(&out)?;
    let mut records = Vec::new();
    for &eps in &cfg.eval_epsilons {
        records.push(relabel(
            evaluate_policy(&policy, &env, &cases, eps, step as usize)?,
            &group,
        ));
    }
    write_evaluation(&name, &records, &out.join("sweep.csv"))?;
    write_cdfs(&records, &data.assets, &out)?;
    render_reports(&out)?;
    Ok(records)
}
