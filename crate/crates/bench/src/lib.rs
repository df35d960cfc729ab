//! Shared fixtures for the kernel benchmarks: the two desk assets with a
//! small ensemble and an untrained global policy.

use clrm_core::economics::EconParams;
use clrm_core::environment::{assign_well_ids, build_well_ids};
use clrm_core::geostat::{generate_realizations, AssetSpec, RealizationSet};
use clrm_core::policy::{Policy, PolicyConfig};
use clrm_core::ppo::{collect_rollouts, EnvSet, EpisodeJob, Trajectory};
use clrm_core::presets::desk_assets;
use clrm_core::simulator::SimConfig;

pub const N_D: usize = 4;

pub struct Desk {
    pub assets: Vec<AssetSpec>,
    pub sets: Vec<RealizationSet>,
}

impl Desk {
    pub fn new(realizations: usize) -> Self {
        let mut assets = desk_assets();
        assign_well_ids(&mut assets).expect("desk assets are valid");
        let sets = assets
            .iter()
            .map(|a| generate_realizations(a, realizations, 11).expect("generation"))
            .collect();
        Self { assets, sets }
    }

    pub fn env(&self) -> EnvSet<'_> {
        EnvSet::new(
            self.assets.clone(),
            self.sets.iter().collect(),
            N_D,
            SimConfig::default(),
            EconParams::default(),
        )
        .expect("desk environment")
    }

    pub fn global_policy(&self, env: &EnvSet) -> Policy {
        let wells = build_well_ids(&env.assets).expect("well ids");
        Policy::new(
            PolicyConfig::global(&env.layout, &wells),
            wells,
            env.layout.clone(),
            5,
        )
        .expect("policy")
    }

    /// Jobs cycling over assets and realizations with ε_c = 1 and no early
    /// termination.
    pub fn jobs(&self, n: usize) -> Vec<EpisodeJob> {
        (0..n)
            .map(|j| EpisodeJob {
                asset: j % self.assets.len(),
                realization: (j / self.assets.len()) % self.sets[0].len(),
                epsilon_c: 1.0,
                allow_early_termination: false,
                seed: j as u64,
            })
            .collect()
    }

    pub fn trajectories(&self, env: &EnvSet, policy: &Policy, n: usize) -> Vec<Trajectory> {
        collect_rollouts(policy, env, &self.jobs(n), false)
            .expect("rollouts")
            .trajectories
    }
}
