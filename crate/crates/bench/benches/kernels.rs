use std::hint::black_box;

use clrm_bench::Desk;
use clrm_core::geostat::{generate_realizations, kmeans};
use clrm_core::nn::Graph;
use clrm_core::policy::{BatchInput, Memory};
use clrm_core::ppo::{build_samples, compute_gae, minibatch_loss, PPOConfig};
use clrm_core::simulator::{SimConfig, Simulator};
use criterion::{criterion_group, criterion_main, Criterion};

fn simulator(c: &mut Criterion) {
    let desk = Desk::new(2);
    let asset = &desk.assets[1];
    let sim = Simulator::new(asset, &desk.sets[1].fields[0], SimConfig::default()).unwrap();
    let (state, _) = sim.run_initial_period(&sim.initial_state()).unwrap();
    let settings = sim.initial_settings();
    c.bench_function("simulate_200_day_step_25x25", |b| {
        b.iter(|| {
            sim.simulate_control_step(black_box(&state), &settings, 200.0, 4)
                .unwrap()
        })
    });
}

fn geostat(c: &mut Criterion) {
    let desk = Desk::new(1);
    c.bench_function("generate_10_realizations_25x25", |b| {
        b.iter(|| generate_realizations(black_box(&desk.assets[0]), 10, 3).unwrap())
    });
    let features: Vec<Vec<f64>> = (0..100)
        .map(|i| (0..40).map(|j| ((i * 31 + j * 17) % 97) as f64).collect())
        .collect();
    c.bench_function("kmeans_100x40_k10", |b| {
        b.iter(|| kmeans(black_box(&features), 10, 1).unwrap())
    });
}

fn policy(c: &mut Criterion) {
    let desk = Desk::new(4);
    let env = desk.env();
    let policy = desk.global_policy(&env);
    let cfg = policy.config().clone();
    let batch = 16;
    let obs = vec![0.5; batch * cfg.n_d * cfg.input_width];
    let mut memory = Vec::new();
    let mut m = Memory::new(cfg.tau, cfg.n_m);
    m.push(vec![0.1; cfg.n_m]).unwrap();
    for _ in 0..batch {
        m.write_padded(&mut memory);
    }
    let lens = vec![1; batch];
    let assets: Vec<usize> = (0..batch).map(|i| i % 2).collect();
    c.bench_function("global_policy_infer_16", |b| {
        b.iter(|| {
            policy
                .infer(&BatchInput {
                    obs: black_box(&obs),
                    memory: &memory,
                    memory_len: &lens,
                    assets: &assets,
                })
                .unwrap()
        })
    });

    let ppo = PPOConfig::global();
    let trajs = desk.trajectories(&env, &policy, 8);
    let samples = build_samples(&trajs, &ppo);
    let mb = &samples[..ppo.minibatch.min(samples.len())];
    let mut group = c.benchmark_group("ppo");
    group.sample_size(10);
    group.bench_function("global_minibatch_forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new(&policy.store);
            let loss = minibatch_loss(&policy, &mut g, black_box(mb), &ppo).unwrap();
            g.backward(loss.total).unwrap()
        })
    });
    group.finish();
}

fn gae(c: &mut Criterion) {
    let n = 19 * 200;
    let rewards: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 * 1e4).collect();
    let values: Vec<f64> = (0..n).map(|i| (i % 19) as f64 * 0.1).collect();
    let dones: Vec<bool> = (0..n).map(|i| i % 19 == 18).collect();
    c.bench_function("gae_3800_steps", |b| {
        b.iter(|| compute_gae(black_box(&rewards), &values, &dones, 1.0, 0.95, 1e-7))
    });
}

criterion_group!(benches, simulator, geostat, policy, gae);
criterion_main!(benches);
