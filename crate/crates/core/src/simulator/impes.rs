//! Incompressible two-phase IMPES time stepping with BHP/rate well control.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::linear::{pcg, BandCholesky, SparseSym};
use super::model::{Reservoir, SimConfig, SolverKind, G_BAR};
use super::well::WellKind;
use crate::container::ArrayStack;
use crate::error::{arg, Error, Result};
use crate::geostat::AssetSpec;

/// Band sizes up to this many multiply-adds are factored directly.
const DIRECT_FLOP_LIMIT: f64 = 5e8;
const MAX_UPWIND_RESOLVES: usize = 3;
/// Mode sweeps that switch every violating well at once; later sweeps switch
/// only the worst one, which breaks the cycles simultaneous switching can enter.
const SIMULTANEOUS_SWEEPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub pressure: Vec<f64>,
    pub water_saturation: Vec<f64>,
    pub time: f64,
}

impl SimState {
    /// Writes pressure and saturation as a two-item array container.
    pub fn write_snapshot(&self, dims: (usize, usize, usize), path: &Path) -> Result<()> {
        let stack = ArrayStack {
            dims: vec![dims.2, dims.1, dims.0],
            seed: self.time.to_bits(),
            items: vec![self.pressure.clone(), self.water_saturation.clone()],
        };
        stack.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    Bhp,
    Rate,
    Shut,
}

/// Time-averaged data of one well over one report interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct WellReport {
    pub oil_rate: f64,
    pub water_rate: f64,
    pub injection_rate: f64,
    pub bhp: f64,
    pub watercut: f64,
}

impl WellReport {
    pub fn liquid_rate(&self) -> f64 {
        self.oil_rate + self.water_rate + self.injection_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportInterval {
    /// Days since project start at the interval start.
    pub t_start: f64,
    pub duration: f64,
    /// One entry per well, in asset well order.
    pub wells: Vec<WellReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub substeps: usize,
    pub pressure_solves: usize,
    pub mode_switches: usize,
    pub rate_limited_wells: usize,
    pub max_mass_balance_error: f64,
    pub injected_volume: f64,
    pub produced_oil_volume: f64,
    pub produced_water_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub reports: Vec<ReportInterval>,
    pub diagnostics: StepDiagnostics,
}

struct WellFlows {
    oil: Vec<f64>,
    water: Vec<f64>,
    inj: Vec<f64>,
}

/// Pressure solution with per-perforation volumetric rates.
struct PressureSolution {
    p: Vec<f64>,
    bhp: Vec<f64>,
    /// Out of the cell (production positive), per well per perforation.
    perf_rates: Vec<Vec<f64>>,
    /// Total volumetric flux from `a` to `b` on each face.
    face_total: Vec<f64>,
}

pub struct Simulator {
    reservoir: Reservoir,
    config: SimConfig,
    gravity: bool,
    fmax_slope: f64,
}

impl Simulator {
    pub fn new(asset: &AssetSpec, log_perm: &[f64], config: SimConfig) -> Result<Self> {
        config.validate()?;
        let reservoir = Reservoir::new(asset, log_perm)?;
        let gravity = config.gravity.unwrap_or(asset.nz > 1) && reservoir.has_vertical_faces();
        let fmax_slope = config.fluid.max_fractional_flow_slope();
        Ok(Self {
            reservoir,
            config,
            gravity,
            fmax_slope,
        })
    }

    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn initial_state(&self) -> SimState {
        let f = &self.config.fluid;
        SimState {
            pressure: vec![f.initial_pressure; self.reservoir.n],
            water_saturation: vec![1.0 - f.initial_oil_saturation; self.reservoir.n],
            time: 0.0,
        }
    }

    /// BHP settings of the fixed initial production period, in asset well order.
    pub fn initial_settings(&self) -> Vec<f64> {
        self.reservoir
            .wells
            .iter()
            .map(|w| match w.spec.kind {
                WellKind::Producer => self.config.initial_producer_bhp,
                WellKind::Injector => self.config.initial_injector_bhp,
            })
            .collect()
    }

    pub fn run_initial_period(&self, state: &SimState) -> Result<(SimState, StepResult)> {
        if state.time != 0.0 {
            return Err(Error::State(format!(
                "initial period must start at t = 0, state is at {}",
                state.time
            )));
        }
        self.simulate_control_step(
            state,
            &self.initial_settings(),
            self.config.initial_period_days,
            self.config.reports_per_step,
        )
    }

    /// Advances `duration` days at fixed BHP settings, reporting over
    /// `n_reports` equal intervals.
    pub fn simulate_control_step(
        &self,
        state: &SimState,
        bhp_settings: &[f64],
        duration: f64,
        n_reports: usize,
    ) -> Result<(SimState, StepResult)> {
        let res = &self.reservoir;
        if bhp_settings.len() != res.wells.len() {
            return arg(format!(
                "{} BHP settings for {} wells",
                bhp_settings.len(),
                res.wells.len()
            ));
        }
        if !(duration > 0.0) || n_reports == 0 {
            return arg("duration must be > 0 and n_reports >= 1");
        }
        for (w, &u) in res.wells.iter().zip(bhp_settings) {
            let tol = 1e-9 * w.spec.bhp_upper;
            let in_bounds = u >= w.spec.bhp_lower - tol && u <= w.spec.bhp_upper + tol;
            let initial =
                u == self.config.initial_producer_bhp || u == self.config.initial_injector_bhp;
            if !u.is_finite() || (!in_bounds && !initial) {
                return arg(format!(
                    "setting {u} for well {} outside [{}, {}]",
                    w.spec.name, w.spec.bhp_lower, w.spec.bhp_upper
                ));
            }
        }

        let nw = res.wells.len();
        let mut sw = state.water_saturation.clone();
        let mut p = state.pressure.clone();
        let mut t = state.time;
        let mut modes = vec![ControlMode::Bhp; nw];
        let mut diag = StepDiagnostics::default();
        let mut reports = Vec::with_capacity(n_reports);
        let interval = duration / n_reports as f64;
        let mut limited = vec![false; nw];

        for r in 0..n_reports {
            let t_start = t;
            let t_end = state.time + interval * (r + 1) as f64;
            let mut oil = vec![0.0; nw];
            let mut water = vec![0.0; nw];
            let mut inj = vec![0.0; nw];
            let mut bhp_dt = vec![0.0; nw];

            while t < t_end {
                let sol = self
                    .solve_pressure(&sw, &p, bhp_settings, &mut modes, &mut diag)
                    .map_err(|e| with_time(e, t))?;
                diag.pressure_solves += 1;
                for (w, m) in modes.iter().enumerate() {
                    limited[w] |= *m == ControlMode::Rate;
                }
                let mut t_p = (t + self.config.pressure_step_days).min(t_end);
                if t_end - t_p < 1e-9 * interval {
                    t_p = t_end;
                }

                // Saturation substeps with total fluxes frozen at the pressure solution.
                while t < t_p {
                    let (dt, flows) = self.saturation_substep(&sol, &mut sw, t_p - t);
                    let (ti, tp) = (
                        flows.inj.iter().sum::<f64>(),
                        flows.oil.iter().sum::<f64>() + flows.water.iter().sum::<f64>(),
                    );
                    if ti > 0.0 {
                        diag.max_mass_balance_error =
                            diag.max_mass_balance_error.max((ti - tp).abs() / ti);
                    }
                    for w in 0..nw {
                        oil[w] += flows.oil[w] * dt;
                        water[w] += flows.water[w] * dt;
                        inj[w] += flows.inj[w] * dt;
                        bhp_dt[w] += sol.bhp[w] * dt;
                    }
                    t = if dt == t_p - t { t_p } else { t + dt };
                    diag.substeps += 1;
                }
                p = sol.p;
            }

            let span = t_end - t_start;
            reports.push(ReportInterval {
                t_start,
                duration: span,
                wells: (0..nw)
                    .map(|w| {
                        let (qo, qw) = (oil[w] / span, water[w] / span);
                        WellReport {
                            oil_rate: qo.max(0.0),
                            water_rate: qw.max(0.0),
                            injection_rate: (inj[w] / span).max(0.0),
                            bhp: bhp_dt[w] / span,
                            watercut: if qo + qw > 0.0 {
                                (qw / (qo + qw)).clamp(0.0, 1.0)
                            } else {
                                0.0
                            },
                        }
                    })
                    .collect(),
            });
            diag.injected_volume += inj.iter().sum::<f64>();
            diag.produced_oil_volume += oil.iter().sum::<f64>();
            diag.produced_water_volume += water.iter().sum::<f64>();
        }
        diag.rate_limited_wells = limited.iter().filter(|&&l| l).count();

        Ok((
            SimState {
                pressure: p,
                water_saturation: sw,
                time: state.time + duration,
            },
            StepResult {
                reports,
                diagnostics: diag,
            },
        ))
    }

    /// One explicit saturation update of at most `max_dt` days. Returns the
    /// step taken and the per-well rates over it.
    fn saturation_substep(
        &self,
        sol: &PressureSolution,
        sw: &mut [f64],
        max_dt: f64,
    ) -> (f64, WellFlows) {
        let res = &self.reservoir;
        let fluid = &self.config.fluid;
        let (swc, swmax) = (fluid.relperm.swc, fluid.relperm.sw_max());
        let nw = res.wells.len();
        let mut dwater = vec![0.0; res.n];
        let mut outflow = vec![0.0; res.n];
        let frac: Vec<f64> = sw.iter().map(|&s| fluid.fractional_flow(s)).collect();
        for (f, face) in res.faces.iter().enumerate() {
            let ft = sol.face_total[f];
            let fw = if self.gravity {
                let grav = G_BAR * face.dz;
                let dp = sol.p[face.a] - sol.p[face.b];
                let up = |rho: f64| {
                    if dp - rho * grav >= 0.0 {
                        face.a
                    } else {
                        face.b
                    }
                };
                let lw = fluid.mobilities(sw[up(fluid.rho_water)]).0;
                let lo = fluid.mobilities(sw[up(fluid.rho_oil)]).1;
                let lt = lw + lo;
                (lw * ft - face.trans * grav * (fluid.rho_water - fluid.rho_oil) * lw * lo) / lt
            } else {
                let up = if ft >= 0.0 { face.a } else { face.b };
                frac[up] * ft
            };
            let fo = ft - fw;
            dwater[face.a] -= fw;
            dwater[face.b] += fw;
            outflow[face.a] += fw.max(0.0) + fo.max(0.0);
            outflow[face.b] += (-fw).max(0.0) + (-fo).max(0.0);
        }
        let mut flows = WellFlows {
            oil: vec![0.0; nw],
            water: vec![0.0; nw],
            inj: vec![0.0; nw],
        };
        for (w, well) in res.wells.iter().enumerate() {
            let rates = &sol.perf_rates[w];
            // Water fraction of the produced stream, for backflowing perforations.
            let (mut qw_out, mut qt_out) = (0.0, 0.0);
            for (perf, &q) in well.perfs.iter().zip(rates) {
                if q > 0.0 {
                    qw_out += q * frac[perf.cell];
                    qt_out += q;
                }
            }
            let stream_fw = if qt_out > 0.0 { qw_out / qt_out } else { 1.0 };
            for (perf, &q) in well.perfs.iter().zip(rates) {
                let c = perf.cell;
                if q > 0.0 {
                    let fw = frac[c];
                    dwater[c] -= q * fw;
                    outflow[c] += q;
                    match well.spec.kind {
                        WellKind::Producer => {
                            flows.water[w] += q * fw;
                            flows.oil[w] += q * (1.0 - fw);
                        }
                        WellKind::Injector => flows.inj[w] -= q,
                    }
                } else if q < 0.0 {
                    match well.spec.kind {
                        WellKind::Injector => {
                            dwater[c] -= q;
                            flows.inj[w] -= q;
                        }
                        WellKind::Producer => {
                            dwater[c] -= q * stream_fw;
                            flows.water[w] += q * stream_fw;
                            flows.oil[w] += q * (1.0 - stream_fw);
                        }
                    }
                }
            }
        }

        let mut dt = max_dt.min(self.config.max_substep_days);
        for c in 0..res.n {
            if outflow[c] > 0.0 {
                dt = dt.min(
                    self.config.cfl_factor * res.pore_volume[c] / (self.fmax_slope * outflow[c]),
                );
            }
        }
        if max_dt - dt < 1e-9 * max_dt {
            dt = max_dt;
        }
        for c in 0..res.n {
            sw[c] = (sw[c] + dt * dwater[c] / res.pore_volume[c]).clamp(swc, swmax);
        }
        (dt, flows)
    }

    /// Solves the pressure equation, iterating control modes (and upwind
    /// directions) to a fixed point.
    fn solve_pressure(
        &self,
        sw: &[f64],
        p_prev: &[f64],
        settings: &[f64],
        modes: &mut [ControlMode],
        diag: &mut StepDiagnostics,
    ) -> Result<PressureSolution> {
        let fluid = &self.config.fluid;
        let mobility: Vec<(f64, f64)> = sw.iter().map(|&s| fluid.mobilities(s)).collect();
        let mut p_guess = p_prev.to_vec();
        let mut upwind_resolves = 0;
        let mut sweeps = 0;
        loop {
            let sol = self.solve_linear(&mobility, &p_guess, settings, modes)?;
            // Upwind consistency.
            let flipped = self.reservoir.faces.iter().any(|f| {
                let grav = if self.gravity { G_BAR * f.dz } else { 0.0 };
                let old = p_guess[f.a] - p_guess[f.b];
                let new = sol.p[f.a] - sol.p[f.b];
                [fluid.rho_water, fluid.rho_oil]
                    .iter()
                    .any(|rho| ((old - rho * grav) >= 0.0) != ((new - rho * grav) >= 0.0))
            });
            let switched = self.update_modes(
                &sol,
                &mobility,
                settings,
                modes,
                sweeps >= SIMULTANEOUS_SWEEPS,
            );
            diag.mode_switches += switched;
            if switched > 0 {
                sweeps += 1;
                if sweeps >= self.config.max_mode_sweeps {
                    return Err(Error::Simulation {
                        time: f64::NAN,
                        message: format!(
                            "well control modes did not settle in {} sweeps",
                            self.config.max_mode_sweeps
                        ),
                    });
                }
            } else if flipped && upwind_resolves < MAX_UPWIND_RESOLVES {
                upwind_resolves += 1;
            } else {
                return Ok(sol);
            }
            p_guess = sol.p;
        }
    }

    /// Returns the number of wells whose mode changed. With `single`, only
    /// the proposal with the largest relative violation is applied.
    fn update_modes(
        &self,
        sol: &PressureSolution,
        mobility: &[(f64, f64)],
        settings: &[f64],
        modes: &mut [ControlMode],
        single: bool,
    ) -> usize {
        let tol = self.config.rate_tolerance;
        // (well, next mode, violation, rate relative to the cap)
        let mut proposals: Vec<(usize, ControlMode, f64, f64)> = Vec::new();
        for (w, well) in self.reservoir.wells.iter().enumerate() {
            let sign = match well.spec.kind {
                WellKind::Producer => 1.0,
                WellKind::Injector => -1.0,
            };
            let q: f64 = sign * sol.perf_rates[w].iter().sum::<f64>();
            let cap = well.spec.max_liquid_rate;
            let proposal = match modes[w] {
                ControlMode::Bhp if q > cap * (1.0 + tol) => {
                    Some((ControlMode::Rate, q / cap - 1.0))
                }
                // Rates within the slack of zero count as zero, so a well carrying no net
                // flow between balanced rate-limited wells does not toggle on rounding noise.
                ControlMode::Bhp if q < -cap * tol => Some((ControlMode::Shut, -q / cap)),
                // Rate control is only kept while the cap is the tighter limit.
                ControlMode::Rate if sign * (settings[w] - sol.bhp[w]) > 0.0 => Some((
                    ControlMode::Bhp,
                    (settings[w] - sol.bhp[w]).abs() / settings[w],
                )),
                ControlMode::Shut => {
                    let rho = self.well_density(well, mobility);
                    let q_open: f64 = well
                        .perfs
                        .iter()
                        .map(|pf| {
                            let (lw, lo) = mobility[pf.cell];
                            let pwf = settings[w] + self.head(rho, pf.dz_ref);
                            sign * pf.wi * (lw + lo) * (sol.p[pf.cell] - pwf)
                        })
                        .sum();
                    (q_open > cap * tol).then_some((ControlMode::Bhp, q_open / cap))
                }
                _ => None,
            };
            if let Some((next, violation)) = proposal {
                proposals.push((w, next, violation, q / cap));
            }
        }
        if single && proposals.len() > 1 {
            let worst = proposals
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .2.total_cmp(&b.1 .2))
                .map(|(i, _)| i);
            proposals = worst.map(|i| vec![proposals[i]]).unwrap_or_default();
        }
        // Wells leaving BHP control this sweep, with their rate relative to the cap.
        let mut left_bhp: Vec<(usize, f64)> = Vec::new();
        for &(w, next, _, ratio) in &proposals {
            if modes[w] == ControlMode::Bhp {
                left_bhp.push((w, ratio));
            }
            modes[w] = next;
        }
        let mut changed = proposals.len();
        // With every open well on rate control an incompressible system has no
        // pressure level; the well closest to its BHP regime stays on BHP.
        let open_rate = modes.contains(&ControlMode::Rate);
        if open_rate && !modes.contains(&ControlMode::Bhp) {
            if let Some(&(w, _)) = left_bhp.iter().min_by(|a, b| {
                let key = |x: &(usize, f64)| {
                    if modes[x.0] == ControlMode::Rate {
                        (0, x.1)
                    } else {
                        (1, -x.1)
                    }
                };
                let (ka, kb) = (key(a), key(b));
                ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
            }) {
                modes[w] = ControlMode::Bhp;
                changed -= 1;
            }
        }
        changed
    }

    fn head(&self, rho: f64, dz: f64) -> f64 {
        if self.gravity {
            rho * G_BAR * dz
        } else {
            0.0
        }
    }

    fn well_density(&self, well: &super::model::WellModel, mobility: &[(f64, f64)]) -> f64 {
        let f = &self.config.fluid;
        match well.spec.kind {
            WellKind::Injector => f.rho_water,
            WellKind::Producer => {
                let (mut num, mut den) = (0.0, 0.0);
                for pf in &well.perfs {
                    let (lw, lo) = mobility[pf.cell];
                    num += pf.wi * (lw * f.rho_water + lo * f.rho_oil);
                    den += pf.wi * (lw + lo);
                }
                if den > 0.0 {
                    num / den
                } else {
                    f.rho_oil
                }
            }
        }
    }

    fn solve_linear(
        &self,
        mobility: &[(f64, f64)],
        p_guess: &[f64],
        settings: &[f64],
        modes: &[ControlMode],
    ) -> Result<PressureSolution> {
        let res = &self.reservoir;
        let fluid = &self.config.fluid;
        let n = res.n;
        let mut a: SparseSym = res.pattern.clone();
        a.values.iter_mut().for_each(|v| *v = 0.0);
        let mut b = vec![0.0; n];
        let mut face_tw = vec![0.0; res.faces.len()];
        let mut face_to = vec![0.0; res.faces.len()];

        for (fi, f) in res.faces.iter().enumerate() {
            let grav = if self.gravity { G_BAR * f.dz } else { 0.0 };
            let dp = p_guess[f.a] - p_guess[f.b];
            let up_w = if dp - fluid.rho_water * grav >= 0.0 {
                f.a
            } else {
                f.b
            };
            let up_o = if dp - fluid.rho_oil * grav >= 0.0 {
                f.a
            } else {
                f.b
            };
            let tw = f.trans * mobility[up_w].0;
            let to = f.trans * mobility[up_o].1;
            face_tw[fi] = tw;
            face_to[fi] = to;
            let tt = tw + to;
            a.values[a.diag_pos[f.a]] += tt;
            a.values[a.diag_pos[f.b]] += tt;
            a.values[f.pos_ab] -= tt;
            a.values[f.pos_ba] -= tt;
            let g = (tw * fluid.rho_water + to * fluid.rho_oil) * grav;
            b[f.a] += g;
            b[f.b] -= g;
        }

        let rho_well: Vec<f64> = res
            .wells
            .iter()
            .map(|w| self.well_density(w, mobility))
            .collect();
        let mut rate_wells = Vec::new();
        let mut any_bhp = false;
        for (w, well) in res.wells.iter().enumerate() {
            match modes[w] {
                ControlMode::Shut => {}
                ControlMode::Bhp => {
                    any_bhp = true;
                    for pf in &well.perfs {
                        let (lw, lo) = mobility[pf.cell];
                        let c = pf.wi * (lw + lo);
                        a.values[a.diag_pos[pf.cell]] += c;
                        b[pf.cell] += c * (settings[w] + self.head(rho_well[w], pf.dz_ref));
                    }
                }
                ControlMode::Rate => {
                    rate_wells.push(w);
                    for pf in &well.perfs {
                        let (lw, lo) = mobility[pf.cell];
                        let c = pf.wi * (lw + lo);
                        a.values[a.diag_pos[pf.cell]] += c;
                        b[pf.cell] += c * self.head(rho_well[w], pf.dz_ref);
                    }
                }
            }
        }

        let mut bhp: Vec<f64> = settings.to_vec();
        let p = if !any_bhp {
            if !rate_wells.is_empty() {
                return Err(Error::Simulation {
                    time: f64::NAN,
                    message: "every open well is rate-controlled; pressure is undetermined".into(),
                });
            }
            p_guess.to_vec()
        } else {
            let solver = LinearSolve::new(&a, res.bandwidth, self.config.solver)?;
            let mut p0 = p_guess.to_vec();
            solver.solve(&a, &b, &mut p0, self.config.cg_tolerance)?;
            if rate_wells.is_empty() {
                p0
            } else {
                // Bordered system [A -B; -Bᵀ D][p; w] = [b; g], eliminated through the Schur complement.
                let nr = rate_wells.len();
                let mut cols = Vec::with_capacity(nr);
                let mut ys = Vec::with_capacity(nr);
                for &w in &rate_wells {
                    let mut col = vec![0.0; n];
                    for pf in &res.wells[w].perfs {
                        let (lw, lo) = mobility[pf.cell];
                        col[pf.cell] += pf.wi * (lw + lo);
                    }
                    let mut y = vec![0.0; n];
                    solver.solve(&a, &col, &mut y, self.config.cg_tolerance)?;
                    cols.push(col);
                    ys.push(y);
                }
                let mut s = vec![0.0; nr * nr];
                let mut rhs = vec![0.0; nr];
                for (r, &w) in rate_wells.iter().enumerate() {
                    let well = &res.wells[w];
                    let d: f64 = cols[r].iter().sum();
                    let q = well.spec.max_liquid_rate;
                    let hsum: f64 = well
                        .perfs
                        .iter()
                        .map(|pf| {
                            let (lw, lo) = mobility[pf.cell];
                            pf.wi * (lw + lo) * self.head(rho_well[w], pf.dz_ref)
                        })
                        .sum();
                    rhs[r] = match well.spec.kind {
                        WellKind::Producer => -q - hsum,
                        WellKind::Injector => q - hsum,
                    } + dot(&cols[r], &p0);
                    for c in 0..nr {
                        s[r * nr + c] = if r == c { d } else { 0.0 } - dot(&cols[r], &ys[c]);
                    }
                }
                let wsol = dense_solve(&mut s, &mut rhs, nr).ok_or_else(|| Error::Simulation {
                    time: f64::NAN,
                    message: "singular rate-constraint system".into(),
                })?;
                for (r, &w) in rate_wells.iter().enumerate() {
                    bhp[w] = wsol[r];
                    for (pi, yi) in p0.iter_mut().zip(&ys[r]) {
                        *pi += wsol[r] * yi;
                    }
                }
                p0
            }
        };

        let perf_rates = res
            .wells
            .iter()
            .enumerate()
            .map(|(w, well)| {
                well.perfs
                    .iter()
                    .map(|pf| {
                        if modes[w] == ControlMode::Shut {
                            return 0.0;
                        }
                        let (lw, lo) = mobility[pf.cell];
                        pf.wi
                            * (lw + lo)
                            * (p[pf.cell] - bhp[w] - self.head(rho_well[w], pf.dz_ref))
                    })
                    .collect()
            })
            .collect();
        let face_total = res
            .faces
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                let grav = if self.gravity { G_BAR * f.dz } else { 0.0 };
                let dp = p[f.a] - p[f.b];
                face_tw[fi] * (dp - fluid.rho_water * grav)
                    + face_to[fi] * (dp - fluid.rho_oil * grav)
            })
            .collect();
        Ok(PressureSolution {
            p,
            bhp,
            perf_rates,
            face_total,
        })
    }
}

enum LinearSolve {
    Direct(BandCholesky),
    Iterative,
}

impl LinearSolve {
    fn new(a: &SparseSym, bw: usize, kind: SolverKind) -> Result<Self> {
        let direct_cost = a.n as f64 * (bw * bw) as f64;
        match kind {
            SolverKind::Direct => Ok(Self::Direct(BandCholesky::factor(a, bw)?)),
            SolverKind::Auto if direct_cost <= DIRECT_FLOP_LIMIT => {
                Ok(Self::Direct(BandCholesky::factor(a, bw)?))
            }
            _ => Ok(Self::Iterative),
        }
    }

    fn solve(&self, a: &SparseSym, b: &[f64], x: &mut [f64], tol: f64) -> Result<()> {
        match self {
            Self::Direct(chol) => {
                x.copy_from_slice(b);
                chol.solve(x);
                Ok(())
            }
            Self::Iterative => match pcg(a, b, x, tol, 20 * a.n + 100) {
                Ok(_) => Ok(()),
                Err(e) => {
                    let bw = a.bandwidth();
                    if (a.n as f64) * (bw * bw) as f64 <= 20.0 * DIRECT_FLOP_LIMIT {
                        log::warn!("CG failed ({e}); falling back to banded Cholesky");
                        x.copy_from_slice(b);
                        BandCholesky::factor(a, bw)?.solve(x);
                        Ok(())
                    } else {
                        Err(e)
                    }
                }
            },
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn dense_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv =
            (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Some(x)
}

fn with_time(e: Error, t: f64) -> Error {
    match e {
        Error::Simulation { message, .. } => Error::Simulation { time: t, message },
        other => other,
    }
}
