use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::economics::EconParams;
use crate::error::{Error, Result};
use crate::geostat::AssetSpec;
use crate::ppo::{sim_budget, PPOConfig, SimBudget};
use crate::presets;
use crate::simulator::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One policy per asset.
    Individual,
    /// One policy shared by every asset.
    Global,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Individual => "individual",
            Mode::Global => "global",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Example2d,
    Example3d,
    Desk,
}

impl Preset {
    pub fn assets(self) -> Vec<AssetSpec> {
        match self {
            Preset::Example2d => presets::example_2d(),
            Preset::Example3d => presets::example_3d(),
            Preset::Desk => presets::desk_assets(),
        }
    }
}

/// Everything a run needs. Unset keys take the full-scale defaults; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Built-in asset set, used when `asset_files` is empty.
    pub preset: Preset,
    /// JSON asset descriptions; when non-empty they replace the preset.
    pub asset_files: Vec<PathBuf>,
    pub realizations: usize,
    pub clusters: usize,
    /// Reports per control step.
    pub n_d: usize,
    /// Length of the fixed-BHP reference simulation used for clustering.
    pub reference_days: f64,
    /// Report intervals of the reference simulation.
    pub reference_reports: usize,
    pub eval_epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Checkpoint stem to resume from; needs a single seed and policy.
    pub resume_from: Option<PathBuf>,
    /// Episodes per iteration of a global run; `ppo.episodes_per_iter`
    /// applies to individual runs.
    pub global_episodes_per_iter: usize,
    pub ppo: PPOConfig,
    pub econ: EconParams,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Global,
            preset: Preset::Example2d,
            asset_files: Vec::new(),
            realizations: 1000,
            clusters: 40,
            n_d: 4,
            reference_days: 4000.0,
            reference_reports: 20,
            eval_epsilons: vec![0.0, 0.5, 1.0],
            seeds: vec![1],
            out: PathBuf::from("runs"),
            resume_from: None,
            global_episodes_per_iter: PPOConfig::global().episodes_per_iter,
            ppo: PPOConfig::individual(),
            econ: EconParams::default(),
            sim: SimConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// The reduced preset: two 25×25 assets, 100 realizations in 10
    /// clusters, 20 episodes per iteration and 150 iterations.
    pub fn desk() -> Self {
        let ppo = PPOConfig {
            iterations: 150,
            episodes_per_iter: 20,
            termination_warmup_iters: 15,
            ..PPOConfig::individual()
        };
        Self {
            preset: Preset::Desk,
            realizations: 100,
            clusters: 10,
            global_episodes_per_iter: 20,
            ppo,
            ..Self::default()
        }
    }

    /// Overwrites the asset set, ensemble sizes and training budget with
    /// the reduced preset, keeping every other setting.
    pub fn apply_desk_scale(&mut self) {
        let d = Self::desk();
        self.preset = d.preset;
        self.asset_files.clear();
        self.realizations = d.realizations;
        self.clusters = d.clusters;
        self.n_d = d.n_d;
        self.global_episodes_per_iter = d.global_episodes_per_iter;
        self.ppo.iterations = d.ppo.iterations;
        self.ppo.episodes_per_iter = d.ppo.episodes_per_iter;
        self.ppo.termination_warmup_iters = d.ppo.termination_warmup_iters;
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }

    pub fn assets(&self) -> Result<Vec<AssetSpec>> {
        if self.asset_files.is_empty() {
            return Ok(self.preset.assets());
        }
        self.asset_files
            .iter()
            .map(|p| {
                let load_err = |m: String| Error::Load {
                    path: p.clone(),
                    message: m,
                };
                let text = std::fs::read_to_string(p).map_err(|e| load_err(e.to_string()))?;
                let spec: AssetSpec =
                    serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?;
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    /// PPO settings of the policy trained in this run's mode.
    pub fn ppo_for_mode(&self) -> PPOConfig {
        match self.mode {
            Mode::Individual => self.ppo.clone(),
            Mode::Global => self.global_ppo(),
        }
    }

    fn global_ppo(&self) -> PPOConfig {
        PPOConfig {
            episodes_per_iter: self.global_episodes_per_iter,
            ..self.ppo.clone()
        }
    }

    /// Simulation counts of individual training on every asset against one
    /// global run under the configured budgets.
    pub fn sim_budget(&self, n_assets: usize) -> SimBudget {
        sim_budget(n_assets, &self.ppo, &self.global_ppo())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n_assets = if self.asset_files.is_empty() {
            self.preset.assets().len()
        } else {
            self.asset_files.len()
        };
        match self.mode {
            Mode::Individual if n_assets < 1 => {
                return bad("individual mode needs at least one asset".into())
            }
            Mode::Global if n_assets < 2 => {
                return bad(format!(
                    "global mode needs at least two assets, got {n_assets}"
                ))
            }
            _ => {}
        }
        if let Some(e) = self
            .eval_epsilons
            .iter()
            .find(|e| !(0.0..=1.0).contains(*e))
        {
            return bad(format!("evaluation epsilon {e} outside [0, 1]"));
        }
        if self.eval_epsilons.is_empty() || self.seeds.is_empty() {
            return bad("eval_epsilons and seeds must be non-empty".into());
        }
        if self.clusters == 0 || self.realizations <= self.clusters {
            return bad(format!(
                "need 1 <= clusters < realizations, got {} and {}",
                self.clusters, self.realizations
            ));
        }
        if self.n_d == 0 || self.reference_reports == 0 || !(self.reference_days > 0.0) {
            return bad("n_d, reference_reports and reference_days must be positive".into());
        }
        if self.resume_from.is_some()
            && (self.seeds.len() != 1 || (self.mode == Mode::Individual && n_assets != 1))
        {
            return bad("resume_from needs a single seed and a single policy".into());
        }
        for (what, eps) in [
            ("ppo", self.ppo.episodes_per_iter),
            ("global", self.global_episodes_per_iter),
        ] {
            if eps % self.clusters != 0 {
                return bad(format!(
                    "{what} episodes per iteration {eps} is not a multiple of {} clusters",
                    self.clusters
                ));
            }
        }
        self.ppo.validate()?;
        self.econ.validate()?;
        self.sim.validate()?;
        Ok(())
    }
}
