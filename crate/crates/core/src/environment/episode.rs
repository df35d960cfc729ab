//! One closed-loop episode on one realization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::control::{apply_action, canonical_order, first_step_settings};
use super::observation::{canonical_reports, normalize_observation, InputLayout, WellScales};
use crate::economics::{should_terminate, step_npv, EconParams};
use crate::error::{arg, Error, Result};
use crate::geostat::AssetSpec;
use crate::simulator::{ReportInterval, SimConfig, SimState, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Position of the asset in the run's asset list.
    pub asset_index: usize,
    pub realization: usize,
    pub epsilon_c: f64,
    pub allow_early_termination: bool,
    #[serde(default = "default_max_steps")]
    pub max_control_steps: usize,
    #[serde(default = "default_step_days")]
    pub control_step_days: f64,
}

fn default_max_steps() -> usize {
    19
}

fn default_step_days() -> f64 {
    200.0
}

impl EpisodeConfig {
    pub fn new(
        asset_index: usize,
        realization: usize,
        epsilon_c: f64,
        allow_early_termination: bool,
    ) -> Self {
        Self {
            asset_index,
            realization,
            epsilon_c,
            allow_early_termination,
            max_control_steps: default_max_steps(),
            control_step_days: default_step_days(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon_c) {
            return arg(format!("epsilon_c = {} outside [0, 1]", self.epsilon_c));
        }
        if self.max_control_steps == 0 || !(self.control_step_days > 0.0) {
            return arg("need max_control_steps >= 1 and control_step_days > 0");
        }
        Ok(())
    }
}

/// Per-step diagnostics passed to the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub k: usize,
    /// Applied settings in canonical well order.
    pub settings: Vec<f64>,
    pub step_npv: f64,
    pub project_life_days: f64,
    pub rate_limited_wells: usize,
    pub mode_switches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One row per report interval and well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub well: String,
    pub oil_rate: f64,
    pub water_rate: f64,
    pub injection_rate: f64,
    /// Reported BHP; differs from the setting while the well is rate-limited.
    pub bhp: f64,
    pub setting: f64,
    pub watercut: f64,
}

pub struct Episode {
    cfg: EpisodeConfig,
    asset: AssetSpec,
    sim: Simulator,
    state: SimState,
    layout: InputLayout,
    scales: WellScales,
    order: Vec<usize>,
    econ: EconParams,
    k: usize,
    u_prev: Vec<f64>,
    done: bool,
    rewards: Vec<f64>,
    trace: Vec<TraceRow>,
}

impl Episode {
    /// Runs the fixed initial period and returns the first global input.
    pub fn reset(
        asset: &AssetSpec,
        log_perm: &[f64],
        layout: &InputLayout,
        cfg: EpisodeConfig,
        sim_config: &SimConfig,
        econ: EconParams,
    ) -> Result<(Self, Vec<f64>)> {
        cfg.validate()?;
        econ.validate()?;
        if cfg.asset_index >= layout.blocks.len() {
            return arg(format!("asset index {} outside layout", cfg.asset_index));
        }
        let scales = WellScales::from_asset(asset);
        if layout.blocks[cfg.asset_index].1 != scales.block_width() {
            return arg(format!(
                "asset {} does not match its layout block",
                asset.name
            ));
        }
        let sim_config = SimConfig {
            reports_per_step: layout.n_d,
            ..sim_config.clone()
        };
        let sim = Simulator::new(asset, log_perm, sim_config)?;
        let (state, res) = sim.run_initial_period(&sim.initial_state())?;
        let order = canonical_order(asset);
        let initial = sim.initial_settings();
        let u_prev: Vec<f64> = order.iter().map(|&w| initial[w]).collect();
        let mut ep = Self {
            cfg,
            asset: asset.clone(),
            sim,
            state,
            layout: layout.clone(),
            scales,
            order,
            econ,
            k: 0,
            u_prev,
            done: false,
            rewards: Vec::new(),
            trace: Vec::new(),
        };
        ep.record(&res.reports, &initial);
        let obs = ep.observe(&res.reports)?;
        Ok((ep, obs))
    }

    fn observe(&self, reports: &[ReportInterval]) -> Result<Vec<f64>> {
        let block = normalize_observation(
            &canonical_reports(reports, &self.order),
            &self.u_prev,
            &self.scales,
        )?;
        self.layout
            .assemble(self.cfg.asset_index, &block, self.cfg.epsilon_c)
    }

    /// `settings` are in asset well order.
    fn record(&mut self, reports: &[ReportInterval], settings: &[f64]) {
        for r in reports {
            for ((spec, w), &setting) in self.asset.wells.iter().zip(&r.wells).zip(settings) {
                self.trace.push(TraceRow {
                    time: r.t_start,
                    well: spec.name.clone(),
                    oil_rate: w.oil_rate,
                    water_rate: w.water_rate,
                    injection_rate: w.injection_rate,
                    bhp: w.bhp,
                    setting,
                    watercut: w.watercut,
                });
            }
        }
    }

    /// Applies an action in `[-1, 1]^Nw` (canonical order) for one control step.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::State("step called on a finished episode".into()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return arg("non-finite action");
        }
        let settings = if self.k == 0 {
            first_step_settings(action, &self.scales.bounds)?
        } else {
            apply_action(
                &self.u_prev,
                action,
                self.cfg.epsilon_c,
                &self.scales.bounds,
            )?
        };
        let mut sim_settings = vec![0.0; settings.len()];
        for (&w, &u) in self.order.iter().zip(&settings) {
            sim_settings[w] = u;
        }
        let (state, res) = self.sim.simulate_control_step(
            &self.state,
            &sim_settings,
            self.cfg.control_step_days,
            self.layout.n_d,
        )?;
        let npv = step_npv(&res.reports, &self.econ)?;
        self.k += 1;
        self.state = state;
        self.u_prev = settings.clone();
        self.rewards.push(npv);
        self.done = self.k >= self.cfg.max_control_steps
            || should_terminate(npv, self.cfg.allow_early_termination);
        self.record(&res.reports, &sim_settings);
        let observation = self.observe(&res.reports)?;
        Ok(StepOutcome {
            observation,
            reward: npv,
            done: self.done,
            info: StepInfo {
                k: self.k,
                settings,
                step_npv: npv,
                project_life_days: self.project_life_days(),
                rate_limited_wells: res.diagnostics.rate_limited_wells,
                mode_switches: res.diagnostics.mode_switches,
            },
        })
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps_taken(&self) -> usize {
        self.k
    }

    pub fn project_life_days(&self) -> f64 {
        self.sim.config().initial_period_days + self.k as f64 * self.cfg.control_step_days
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn total_npv(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn n_wells(&self) -> usize {
        self.order.len()
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        write_trace_csv(&self.trace, path)
    }
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
