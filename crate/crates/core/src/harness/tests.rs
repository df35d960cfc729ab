use std::path::PathBuf;

use proptest::prelude::*;

use super::*;
use crate::economics::EconParams;
use crate::environment::build_well_ids;
use crate::error::Error;
use crate::geostat::{
    generate_realizations, sample_global_batch, AssetSpec, ClusterAssignment, VariogramKind,
    VariogramModel,
};
use crate::policy::{Policy, PolicyConfig};
use crate::ppo::{EnvSet, PPOConfig};
use crate::presets::scattered_wells;
use crate::rng::rng_for;
use crate::simulator::SimConfig;

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

fn record(iteration: usize, npv: f64) -> EvaluationRecord {
    EvaluationRecord {
        iteration,
        epsilon_c: 1.0,
        cases: vec![(0, 0)],
        npvs: vec![npv],
        expected_npv: npv,
        selected: false,
    }
}

#[test]
fn default_and_desk_configs_validate() {
    ExperimentConfig::default().validate().unwrap();
    let d = ExperimentConfig::desk();
    d.validate().unwrap();
    assert_eq!(d.assets().unwrap().len(), 2);
    assert_eq!((d.realizations, d.clusters, d.n_d), (100, 10, 4));
    assert_eq!(
        (
            d.ppo.iterations,
            d.ppo.episodes_per_iter,
            d.global_episodes_per_iter
        ),
        (150, 20, 20)
    );
}

#[test]
fn toml_round_trip_and_partial_documents() {
    let d = ExperimentConfig::desk();
    let back = ExperimentConfig::from_toml(&d.to_toml().unwrap()).unwrap();
    assert_eq!(back, d);
    let partial =
        ExperimentConfig::from_toml("mode = \"individual\"\n[ppo]\niterations = 7\n").unwrap();
    assert_eq!(partial.mode, Mode::Individual);
    assert_eq!(partial.ppo.iterations, 7);
    assert_eq!(partial.ppo.epochs_per_iter, 10);
    assert_eq!(partial.clusters, 40);
}

#[test]
fn unknown_keys_are_rejected_at_every_level() {
    for doc in [
        "mod = \"global\"",
        "[ppo]\nitertions = 3",
        "[econ]\noil = 1.0",
        "[sim]\nfoo = 1",
    ] {
        assert!(
            matches!(ExperimentConfig::from_toml(doc), Err(Error::Config(_))),
            "{doc}"
        );
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    std::fs::write(&path, serde_json::to_string(&small_asset(1, 2, 1)).unwrap()).unwrap();
    let one = ExperimentConfig {
        asset_files: vec![path],
        ..ExperimentConfig::default()
    };
    assert!(
        matches!(one.validate(), Err(Error::Config(_))),
        "global mode with one asset"
    );
    ExperimentConfig {
        mode: Mode::Individual,
        ..one.clone()
    }
    .validate()
    .unwrap();
    let cases = [
        ExperimentConfig {
            eval_epsilons: vec![0.0, 1.5],
            ..ExperimentConfig::default()
        },
        ExperimentConfig {
            eval_epsilons: vec![],
            ..ExperimentConfig::default()
        },
        ExperimentConfig {
            clusters: 1000,
            ..ExperimentConfig::default()
        },
        ExperimentConfig {
            clusters: 30,
            ..ExperimentConfig::default()
        },
        ExperimentConfig {
            resume_from: Some(PathBuf::from("x")),
            seeds: vec![1, 2],
            ..ExperimentConfig::default()
        },
    ];
    for c in cases {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

#[test]
fn missing_asset_file_is_a_load_error() {
    let c = ExperimentConfig {
        asset_files: vec![
            PathBuf::from("/nonexistent/a.json"),
            PathBuf::from("/nonexistent/b.json"),
        ],
        ..ExperimentConfig::default()
    };
    assert!(matches!(c.assets(), Err(Error::Load { .. })));
}

#[test]
fn config_hash_is_stable_and_sensitive() {
    let a = ExperimentConfig::desk();
    assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
    assert_eq!(a.hash().unwrap().len(), 64);
    let b = ExperimentConfig {
        seeds: vec![2],
        ..a.clone()
    };
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
}

#[test]
fn full_scale_budgets_give_the_reported_ratio() {
    let c = ExperimentConfig::default();
    let b = c.sim_budget(4);
    assert_eq!(b.individual_total, 640_000);
    assert_eq!(b.global_total, 200_000);
    assert_eq!(b.ratio, 0.3125);
}

#[test]
fn select_optimal_cases() {
    assert_eq!(select_optimal(&[record(0, 5.0)]).unwrap(), 0);
    let rising: Vec<_> = (0..5).map(|i| record(10 * i, i as f64)).collect();
    assert_eq!(select_optimal(&rising).unwrap(), 4);
    let tie = [
        record(0, 1.0),
        record(10, 3.0),
        record(20, 3.0),
        record(30, 2.0),
    ];
    assert_eq!(select_optimal(&tie).unwrap(), 1);
    assert!(matches!(select_optimal(&[]), Err(Error::Argument(_))));
}

proptest! {
    #[test]
    fn selected_record_dominates(values in prop::collection::vec(-1e9f64..1e9, 1..30)) {
        let recs: Vec<_> = values.iter().enumerate().map(|(i, &v)| record(i, v)).collect();
        let s = select_optimal(&recs).unwrap();
        for (i, r) in recs.iter().enumerate() {
            prop_assert!(recs[s].expected_npv >= r.expected_npv);
            if r.expected_npv == recs[s].expected_npv {
                prop_assert!(s <= i);
            }
        }
    }

    #[test]
    fn cdf_matches_rank_counting(values in prop::collection::vec(-100i32..100, 1..40)) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64 * 1e5).collect();
        let cdf = compute_cdf(&v).unwrap();
        let n = v.len() as f64;
        prop_assert_eq!(cdf.len(), v.len());
        for (i, w) in cdf.windows(2).enumerate() {
            prop_assert!(w[0].0 <= w[1].0);
            prop_assert_eq!(w[0].1, (i + 1) as f64 / n);
        }
        for &(x, p) in &cdf {
            // Count of values ≤ x bounds the probability of x's last copy.
            let at_most = v.iter().filter(|&&y| y <= x).count() as f64 / n;
            let below = v.iter().filter(|&&y| y < x).count() as f64 / n;
            prop_assert!(p > below && p <= at_most);
        }
        let last = cdf.last().unwrap();
        prop_assert_eq!(last.1, 1.0);
    }
}

#[test]
fn cdf_examples() {
    assert_eq!(compute_cdf(&[7.5]).unwrap(), vec![(7.5, 1.0)]);
    let c = compute_cdf(&[4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]);
    assert!(matches!(compute_cdf(&[]), Err(Error::Argument(_))));
    assert!(compute_cdf(&[1.0, f64::NAN]).is_err());
}

#[test]
fn test_set_is_the_centroids_and_never_sampled() {
    let a = ClusterAssignment {
        labels: vec![0, 1, 0, 1, 2, 2, 0],
        centroid_members: vec![2, 1, 5],
    };
    let b = ClusterAssignment {
        labels: vec![1, 0, 0, 1],
        centroid_members: vec![1, 3],
    };
    let clusters = vec![a, b];
    let test = test_set(&clusters);
    assert_eq!(test, vec![(0, 2), (0, 1), (0, 5), (1, 1), (1, 3)]);
    let mut rng = rng_for(3, &[]);
    for _ in 0..200 {
        for pick in sample_global_batch(&clusters, 4, &mut rng) {
            assert!(!test.contains(&pick));
        }
    }
}

#[test]
fn cluster_table_round_trip_and_errors() {
    let a = ClusterAssignment {
        labels: vec![0, 1, 0, 2, 1],
        centroid_members: vec![2, 4, 3],
    };
    let rows = cluster_rows(&a);
    assert_eq!(clusters_from_rows(&rows).unwrap(), a);
    let mut twice = rows.clone();
    twice[0].centroid = true;
    assert!(clusters_from_rows(&twice).is_err());
    let mut none = rows.clone();
    none[2].centroid = false;
    assert!(clusters_from_rows(&none).is_err());
    let mut dup = rows;
    dup[1].realization = 0;
    assert!(clusters_from_rows(&dup).is_err());
}

#[test]
fn median_case_picks_the_lower_median_per_asset() {
    let r = EvaluationRecord {
        iteration: 0,
        epsilon_c: 1.0,
        cases: vec![(0, 4), (0, 7), (1, 2), (0, 9), (0, 1), (1, 5)],
        npvs: vec![3.0, 1.0, 10.0, 4.0, 2.0, 20.0],
        expected_npv: 40.0 / 6.0,
        selected: false,
    };
    // Asset 0 sorted: 1 (idx 1), 2 (idx 4), 3 (idx 0), 4 (idx 3).
    assert_eq!(median_case(&r, 0), Some(4));
    assert_eq!(median_case(&r, 1), Some(2));
    assert_eq!(median_case(&r, 2), None);
    assert_eq!(r.asset_mean(0), Some(2.5));
    assert_eq!(r.asset_npvs(1), vec![10.0, 20.0]);
}

#[test]
fn csv_tables_round_trip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let recs = vec![
        EvaluationRecord {
            iteration: 10,
            epsilon_c: 0.5,
            cases: vec![(0, 3), (1, 8)],
            npvs: vec![1.234_567_890_123e8, -0.1],
            expected_npv: 61_728_394.456_15,
            selected: true,
        },
        record(20, 1.0 / 3.0),
    ];
    let p = dir.path().join("evaluation.csv");
    write_evaluation("global", &recs, &p).unwrap();
    let rows: Vec<EvaluationRow> = read_csv(&p).unwrap();
    let q = dir.path().join("again.csv");
    write_csv(&rows, &q).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    assert_eq!(rows, evaluation_rows("global", &recs));
}

fn tiny_env_policy(
    assets: &[AssetSpec],
    sets: &[crate::geostat::RealizationSet],
) -> (EnvSet<'static>, Policy) {
    let sets: &'static [crate::geostat::RealizationSet] =
        Box::leak(sets.to_vec().into_boxed_slice());
    let env = EnvSet::new(
        assets.to_vec(),
        sets.iter().collect(),
        2,
        SimConfig::default(),
        EconParams::default(),
    )
    .unwrap();
    let wells = build_well_ids(&env.assets).unwrap();
    let mut cfg = PolicyConfig::global(&env.layout, &wells);
    cfg.n_m = 16;
    cfg.heads = 2;
    cfg.conv_filters = 8;
    cfg.mlp_hidden = 16;
    cfg.value_hidden = 8;
    let policy = Policy::new(cfg, wells, env.layout.clone(), 4).unwrap();
    (env, policy)
}

#[test]
fn evaluation_is_deterministic_and_its_mean_is_exact() {
    let assets = vec![small_asset(1, 2, 1), small_asset(2, 3, 2)];
    let sets: Vec<_> = assets
        .iter()
        .map(|a| generate_realizations(a, 4, 9).unwrap())
        .collect();
    let (env, policy) = tiny_env_policy(&assets, &sets);
    let cases = vec![(0, 0), (0, 3), (1, 1), (1, 2)];
    let a = evaluate_policy(&policy, &env, &cases, 1.0, 0).unwrap();
    let b = evaluate_policy(&policy, &env, &cases, 1.0, 0).unwrap();
    assert_eq!(a, b);
    let mean = a.npvs.iter().sum::<f64>() / a.npvs.len() as f64;
    assert!((mean - a.expected_npv).abs() <= 1e-12 * mean.abs());
    assert_eq!(a.cases, cases);
    assert!(matches!(
        evaluate_policy(&policy, &env, &[], 1.0, 0),
        Err(Error::Argument(_))
    ));
}

#[test]
fn zero_epsilon_holds_every_setting_after_the_first_step() {
    let assets = vec![small_asset(1, 2, 1), small_asset(2, 3, 2)];
    let sets: Vec<_> = assets
        .iter()
        .map(|a| generate_realizations(a, 3, 2).unwrap())
        .collect();
    let (env, policy) = tiny_env_policy(&assets, &sets);
    let cases = vec![(0, 0), (0, 1), (1, 0), (1, 2)];
    let (_, traces) = evaluate_policy_traced(&policy, &env, &cases, 0.0, 0, true).unwrap();
    assert_eq!(traces.len(), cases.len());
    let after_first = env.sim.initial_period_days + 200.0;
    for trace in &traces {
        for well in trace
            .iter()
            .map(|t| t.well.clone())
            .collect::<std::collections::BTreeSet<_>>()
        {
            let bhp: Vec<f64> = trace
                .iter()
                .filter(|t| t.well == well && t.time >= after_first)
                .map(|t| t.setting)
                .collect();
            assert!(!bhp.is_empty());
            assert!(bhp.iter().all(|&b| b == bhp[0]), "{well}: {bhp:?}");
        }
    }
}

#[test]
fn checkpoint_evaluation_matches_and_rejects_foreign_layouts() {
    let assets = vec![small_asset(1, 2, 1), small_asset(2, 3, 2)];
    let sets: Vec<_> = assets
        .iter()
        .map(|a| generate_realizations(a, 3, 5).unwrap())
        .collect();
    let (env, policy) = tiny_env_policy(&assets, &sets);
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("ckpt");
    policy.save(&stem, 40, 1).unwrap();
    let cases = vec![(0, 1), (1, 2)];
    let direct = evaluate_policy(&policy, &env, &cases, 0.5, 40).unwrap();
    assert_eq!(
        evaluate_checkpoint(&stem, &env, &cases, 0.5).unwrap(),
        direct
    );

    let other = vec![small_asset(1, 2, 1), small_asset(3, 4, 2)];
    let other_sets: Vec<_> = other
        .iter()
        .map(|a| generate_realizations(a, 3, 5).unwrap())
        .collect();
    let (other_env, _) = tiny_env_policy(&other, &other_sets);
    assert!(matches!(
        evaluate_checkpoint(&stem, &other_env, &cases, 0.5),
        Err(Error::Load { .. })
    ));
}

#[test]
fn reference_features_have_oil_and_water_series() {
    let a = small_asset(1, 2, 1);
    let set = generate_realizations(&a, 3, 1).unwrap();
    let provider = ReferenceSimulation {
        sim: SimConfig::default(),
        days: 1000.0,
        reports: 5,
    };
    let f = provider.features(&a, &set).unwrap();
    assert_eq!(f.len(), 3);
    for v in &f {
        assert_eq!(v.len(), 10);
        assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert!(v[0] > 0.0, "oil is produced from the start");
    }
    assert_ne!(f[0], f[1], "different fields give different responses");
}

#[test]
fn individual_groups_keep_global_well_ids() {
    let mut assets = crate::presets::example_2d();
    let table = crate::environment::assign_well_ids(&mut assets).unwrap();
    let flat: Vec<usize> = table.blocks.concat();
    assert_eq!(flat, (1..=50).collect::<Vec<_>>());
    let groups = policy_groups(Mode::Individual, &assets);
    assert_eq!(groups.len(), 4);
    assert_eq!(groups[2], ("individual_C".to_string(), vec![2]));
    assert_eq!(
        policy_groups(Mode::Global, &assets),
        vec![("global".to_string(), vec![0, 1, 2, 3])]
    );
}

#[test]
fn ppo_defaults_follow_the_mode() {
    let c = ExperimentConfig::default();
    assert_eq!(
        c.ppo_for_mode().episodes_per_iter,
        PPOConfig::global().episodes_per_iter
    );
    let i = ExperimentConfig {
        mode: Mode::Individual,
        ..c
    };
    assert_eq!(
        i.ppo_for_mode().episodes_per_iter,
        PPOConfig::individual().episodes_per_iter
    );
}

#[test]
fn desk_scale_overrides_only_the_scale() {
    let mut c = ExperimentConfig::from_toml(
        "mode = \"individual\"\nseeds = [4, 5]\n[ppo]\nlr_start = 3e-4\niterations = 9\n",
    )
    .unwrap();
    c.apply_desk_scale();
    let d = ExperimentConfig::desk();
    assert_eq!(c.mode, Mode::Individual);
    assert_eq!(c.seeds, vec![4, 5]);
    assert_eq!(c.ppo.lr_start, 3e-4);
    assert_eq!(c.ppo.iterations, d.ppo.iterations);
    assert_eq!(
        (c.preset, c.realizations, c.clusters),
        (d.preset, d.realizations, d.clusters)
    );
    c.validate().unwrap();
}
