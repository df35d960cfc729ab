//! End-to-end runs of the experiment pipeline on two small assets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clrm_core::geostat::{AssetSpec, RealizationSet, VariogramKind, VariogramModel};
use clrm_core::harness::{
    read_csv, reference_provider, run_in, BhpRow, CdfRow, ClusterRow, EvaluationRow,
    ExperimentConfig, FeatureProvider, Mode, RunManifest,
};
use clrm_core::ppo::{read_training_log, BatchEntry, IterationLog, PPOConfig};
use clrm_core::presets::scattered_wells;
use clrm_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

fn small_asset(id: usize, np: usize, ni: usize) -> AssetSpec {
    AssetSpec {
        asset_id: id,
        name: format!("S{id}"),
        nx: 10,
        ny: 10,
        nz: 1,
        dx: 60.0,
        dy: 60.0,
        dz: 12.0,
        wells: scattered_wells(10, 10, np, ni, id),
        variogram: VariogramModel::new(VariogramKind::Exponential, 4.0),
        log_perm_mean: 5.0,
        log_perm_variance: 0.5,
        porosity: 0.2,
        kv_kh_ratio: 0.1,
        hard_data: vec![],
    }
}

fn tiny_config(dir: &Path, mode: Mode) -> ExperimentConfig {
    let files: Vec<PathBuf> = [small_asset(1, 2, 1), small_asset(2, 3, 2)]
        .iter()
        .map(|a| {
            let p = dir.join(format!("{}.json", a.name));
            std::fs::write(&p, serde_json::to_string_pretty(a).unwrap()).unwrap();
            p
        })
        .collect();
    ExperimentConfig {
        mode,
        asset_files: files,
        realizations: 8,
        clusters: 2,
        reference_days: 1000.0,
        reference_reports: 5,
        seeds: vec![7],
        global_episodes_per_iter: 4,
        ppo: PPOConfig {
            iterations: 2,
            epochs_per_iter: 1,
            minibatch: 64,
            episodes_per_iter: 2,
            termination_warmup_iters: 1,
            eval_every: 1,
            ..PPOConfig::individual()
        },
        ..ExperimentConfig::default()
    }
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(csv_files(&p));
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn round_trip<T: Serialize + DeserializeOwned>(path: &Path) {
    let rows: Vec<T> = read_csv(path).unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).unwrap();
    }
    let bytes = w.into_inner().unwrap();
    assert_eq!(bytes, std::fs::read(path).unwrap(), "{}", path.display());
}

#[test]
fn global_run_exports_reproducible_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), Mode::Global);
    let provider = reference_provider(&cfg);
    let a = run_in(&cfg, &tmp.path().join("a"), &provider, 1).unwrap();
    let b = run_in(&cfg, &tmp.path().join("b"), &provider, 1).unwrap();

    // Same seeds give byte-identical CSVs.
    let fa = csv_files(&a.dir);
    let fb = csv_files(&b.dir);
    assert_eq!(fa.len(), fb.len());
    assert!(fa.len() >= 12, "{fa:?}");
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(
            x.strip_prefix(&a.dir).unwrap(),
            y.strip_prefix(&b.dir).unwrap()
        );
        assert_eq!(
            std::fs::read(x).unwrap(),
            std::fs::read(y).unwrap(),
            "{}",
            x.display()
        );
    }

    // Every CSV round-trips through its row type.
    for p in &fa {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        match name.as_str() {
            "training_log.csv" => round_trip::<IterationLog>(p),
            "training_batches.csv" => round_trip::<BatchEntry>(p),
            "evaluation.csv" | "sweep.csv" => round_trip::<EvaluationRow>(p),
            n if n.starts_with("cdf_") => round_trip::<CdfRow>(p),
            n if n.starts_with("bhp_") => round_trip::<BhpRow>(p),
            n if n.starts_with("clusters_") => round_trip::<ClusterRow>(p),
            n => panic!("unexpected CSV {n}"),
        }
    }

    let seed_dir = a.dir.join("seed_7");
    let pdir = seed_dir.join("global");
    for f in [
        "training_log.svg",
        "evaluation.svg",
        "cdf_S1_eps_0.00.csv",
        "cdf_S2_eps_0.50.svg",
        "cdf_S2_eps_1.00.csv",
        "bhp_S1.csv",
        "bhp_S2.svg",
        "selected.bin",
        "final.adam.bin",
    ] {
        assert!(pdir.join(f).exists(), "{f} missing");
    }
    assert!(seed_dir.join("realizations/S1/realizations.bin").exists());

    // No test realization ever enters a training batch.
    let test: BTreeSet<(usize, usize)> = ["S1", "S2"]
        .iter()
        .enumerate()
        .flat_map(|(n, name)| {
            let rows: Vec<ClusterRow> =
                read_csv(&seed_dir.join(format!("clusters_{name}.csv"))).unwrap();
            rows.into_iter()
                .filter(|r| r.centroid)
                .map(move |r| (n, r.realization))
        })
        .collect();
    assert_eq!(test.len(), 4);
    let batches: Vec<BatchEntry> = read_csv(&pdir.join("training_batches.csv")).unwrap();
    assert_eq!(batches.len(), 8);
    assert!(batches
        .iter()
        .all(|e| !test.contains(&(e.asset, e.realization))));

    let run = &a.seeds[0].policies[0];
    assert_eq!(run.records.len(), 3);
    for r in &run.records {
        assert!(run.selected_record().expected_npv >= r.expected_npv);
        let cases: BTreeSet<_> = r.cases.iter().copied().collect();
        assert_eq!(cases, test);
    }
    assert_eq!(run.sweeps.len(), 3);
    let evals: Vec<EvaluationRow> = read_csv(&pdir.join("evaluation.csv")).unwrap();
    assert_eq!(evals.iter().filter(|e| e.selected).count(), 4);
    assert_eq!(
        read_training_log(&pdir.join("training_log.csv"))
            .unwrap()
            .len(),
        2
    );

    let m = RunManifest::load(&a.dir.join("manifest.json")).unwrap();
    assert_eq!(m.well_ids.blocks, vec![vec![1, 2, 3], vec![4, 5, 6, 7, 8]]);
    assert_eq!(m.sim_budget.ratio, 4.0 * 2.0 / (2.0 * 2.0 * 2.0));
    assert!(m.stages.iter().all(|s| s.ok));
    assert_eq!(m.stages.len(), 3);
    assert_eq!(m.config_hash, cfg.hash().unwrap());
    let reloaded = ExperimentConfig::load(&a.dir.join("config.toml")).unwrap();
    assert_eq!(reloaded, cfg);
}

#[test]
fn individual_run_trains_one_policy_per_asset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), Mode::Individual);
    let out = run_in(&cfg, &tmp.path().join("run"), &reference_provider(&cfg), 1).unwrap();
    let names: Vec<&str> = out.seeds[0]
        .policies
        .iter()
        .map(|p| p.name.as_str())
        .collect();
    assert_eq!(names, ["individual_S1", "individual_S2"]);
    for (n, p) in out.seeds[0].policies.iter().enumerate() {
        assert_eq!(p.assets, vec![n]);
        assert!(p.records.iter().all(|r| r.cases.iter().all(|c| c.0 == n)));
        assert!(p.sweep(0.5).is_some());
    }
    assert_eq!(out.manifest.parameter_counts.len(), 2);
    assert!(out.seeds[0].policies[0].parameter_count < out.seeds[0].policies[1].parameter_count);
}

struct Broken;

impl FeatureProvider for Broken {
    fn features(&self, _: &AssetSpec, _: &RealizationSet) -> Result<Vec<Vec<f64>>> {
        Err(Error::Clustering("feature source unavailable".into()))
    }
}

#[test]
fn stage_errors_are_recorded_and_outputs_kept() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), Mode::Global);
    let dir = tmp.path().join("run");
    let err = run_in(&cfg, &dir, &Broken, 1).unwrap_err();
    assert!(matches!(err, Error::Clustering(_)));
    let m = RunManifest::load(&dir.join("manifest.json")).unwrap();
    let stages: Vec<(&str, bool)> = m.stages.iter().map(|s| (s.stage.as_str(), s.ok)).collect();
    assert_eq!(stages, [("generate", true), ("cluster", false)]);
    assert!(m.stages[1]
        .error
        .as_deref()
        .unwrap()
        .contains("feature source unavailable"));
    assert!(dir.join("seed_7/realizations/S2/realizations.bin").exists());
}
