use serde::{Deserialize, Serialize};

use super::fluid::FluidRock;
use super::linear::SparseSym;
use super::well::{peaceman_well_index, WellSpec, DARCY_METRIC};
use crate::error::{arg, Result};
use crate::geostat::AssetSpec;

/// Standard gravity times 1e-5, so that `ρ[kg/m³] · G_BAR · Δz[m]` is in bar.
pub const G_BAR: f64 = 9.806_65e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Banded Cholesky when the band is small, conjugate gradients otherwise.
    #[default]
    Auto,
    Pcg,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub fluid: FluidRock,
    /// `None` enables gravity for multi-layer grids only.
    pub gravity: Option<bool>,
    pub cfl_factor: f64,
    pub max_substep_days: f64,
    /// Interval between pressure solves; saturation substeps run in between.
    pub pressure_step_days: f64,
    pub solver: SolverKind,
    pub cg_tolerance: f64,
    pub initial_period_days: f64,
    pub initial_injector_bhp: f64,
    pub initial_producer_bhp: f64,
    pub reports_per_step: usize,
    /// Relative slack, as a fraction of the cap, before a liquid rate counts
    /// as exceeding the cap or as flowing backwards.
    pub rate_tolerance: f64,
    pub max_mode_sweeps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fluid: FluidRock::default(),
            gravity: None,
            cfl_factor: 0.9,
            max_substep_days: 10.0,
            pressure_step_days: 25.0,
            solver: SolverKind::Auto,
            cg_tolerance: 1e-13,
            initial_period_days: 200.0,
            initial_injector_bhp: 400.0,
            initial_producer_bhp: 345.0,
            reports_per_step: 4,
            rate_tolerance: 1e-9,
            max_mode_sweeps: 40,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.fluid.validate()?;
        if !(self.cfl_factor > 0.0 && self.cfl_factor <= 1.0) {
            return arg("cfl_factor must be in (0, 1]");
        }
        if !(self.max_substep_days > 0.0) {
            return arg("max_substep_days must be > 0");
        }
        if !(self.pressure_step_days > 0.0) {
            return arg("pressure_step_days must be > 0");
        }
        if self.reports_per_step == 0 {
            return arg("reports_per_step must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Face {
    pub a: usize,
    pub b: usize,
    pub trans: f64,
    /// depth(a) - depth(b), m.
    pub dz: f64,
    pub pos_ab: usize,
    pub pos_ba: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Perforation {
    pub cell: usize,
    pub wi: f64,
    /// Depth below the well's reference (shallowest) perforation, m.
    pub dz_ref: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct WellModel {
    pub spec: WellSpec,
    pub perfs: Vec<Perforation>,
}

/// Static discretization of one realization.
#[derive(Debug, Clone)]
pub struct Reservoir {
    pub(crate) n: usize,
    pub(crate) pore_volume: Vec<f64>,
    pub(crate) faces: Vec<Face>,
    pub(crate) wells: Vec<WellModel>,
    pub(crate) pattern: SparseSym,
    pub(crate) bandwidth: usize,
    pub(crate) dims: (usize, usize, usize),
}

impl Reservoir {
    /// Builds transmissibilities and well indices from ln-permeability (ln md).
    pub fn new(asset: &AssetSpec, log_perm: &[f64]) -> Result<Self> {
        asset.validate()?;
        let n = asset.n_cells();
        if log_perm.len() != n {
            return arg(format!("field has {} cells, grid has {n}", log_perm.len()));
        }
        let k: Vec<f64> = log_perm.iter().map(|v| v.exp()).collect();
        let (nx, ny, nz) = (asset.nx, asset.ny, asset.nz);
        let (dx, dy, dz) = (asset.dx, asset.dy, asset.dz);
        let harmonic = |ka: f64, kb: f64| 2.0 * ka * kb / (ka + kb);

        let mut raw = Vec::new();
        for kk in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let c = asset.cell_index(i, j, kk);
                    if i + 1 < nx {
                        let o = c + 1;
                        raw.push((
                            c,
                            o,
                            DARCY_METRIC * dy * dz / dx * harmonic(k[c], k[o]),
                            0.0,
                        ));
                    }
                    if j + 1 < ny {
                        let o = c + nx;
                        raw.push((
                            c,
                            o,
                            DARCY_METRIC * dx * dz / dy * harmonic(k[c], k[o]),
                            0.0,
                        ));
                    }
                    if kk + 1 < nz {
                        let o = c + nx * ny;
                        let kv = asset.kv_kh_ratio;
                        raw.push((
                            c,
                            o,
                            DARCY_METRIC * dx * dy / dz * harmonic(kv * k[c], kv * k[o]),
                            -dz,
                        ));
                    }
                }
            }
        }
        let pairs: Vec<(usize, usize)> = raw.iter().map(|&(a, b, _, _)| (a, b)).collect();
        let pattern = SparseSym::from_pattern(n, &pairs);
        let faces = raw
            .iter()
            .map(|&(a, b, trans, dz)| Face {
                a,
                b,
                trans,
                dz,
                pos_ab: pattern.position(a, b),
                pos_ba: pattern.position(b, a),
            })
            .collect();

        let wells = asset
            .wells
            .iter()
            .map(|w| {
                let layers = w.perforated_layers(nz);
                let top = *layers.iter().min().unwrap_or(&0);
                let perfs = layers
                    .iter()
                    .map(|&kk| {
                        let cell = asset.cell_index(w.i, w.j, kk);
                        Ok(Perforation {
                            cell,
                            wi: peaceman_well_index(
                                k[cell],
                                k[cell],
                                dx,
                                dy,
                                dz,
                                w.wellbore_radius,
                            )?,
                            dz_ref: (kk - top) as f64 * dz,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(WellModel {
                    spec: w.clone(),
                    perfs,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let bandwidth = pattern.bandwidth();
        Ok(Self {
            n,
            pore_volume: vec![asset.porosity * dx * dy * dz; n],
            faces,
            wells,
            pattern,
            bandwidth,
            dims: (nx, ny, nz),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn n_wells(&self) -> usize {
        self.wells.len()
    }

    pub fn total_pore_volume(&self) -> f64 {
        self.pore_volume.iter().sum()
    }

    pub fn well_spec(&self, w: usize) -> &WellSpec {
        &self.wells[w].spec
    }

    /// Depth-independent cells have `dz = 0` on all faces.
    pub(crate) fn has_vertical_faces(&self) -> bool {
        self.faces.iter().any(|f| f.dz != 0.0)
    }
}
