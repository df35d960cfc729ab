use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::field::Cholesky;
use super::variogram::VariogramModel;
use crate::error::{arg, Error, Result};
use crate::rng::rng_for;
use crate::simulator::{WellKind, WellSpec};

/// Default ln-permeability prior (ln md).
pub const DEFAULT_LOG_PERM_MEAN: f64 = 4.0;
pub const DEFAULT_LOG_PERM_VARIANCE: f64 = 1.0;

/// Known ln-permeability at one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardDatum {
    pub cell: usize,
    pub value: f64,
}

/// Geometry, wells and geostatistics of one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub asset_id: usize,
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub wells: Vec<WellSpec>,
    pub variogram: VariogramModel,
    pub log_perm_mean: f64,
    pub log_perm_variance: f64,
    pub porosity: f64,
    pub kv_kh_ratio: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hard_data: Vec<HardDatum>,
}

impl AssetSpec {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_3d(&self) -> bool {
        self.nz > 1
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize, usize) {
        let i = cell % self.nx;
        let j = (cell / self.nx) % self.ny;
        (i, j, cell / (self.nx * self.ny))
    }

    pub fn well_cells(&self, well: &WellSpec) -> Vec<usize> {
        well.perforated_layers(self.nz)
            .into_iter()
            .map(|k| self.cell_index(well.i, well.j, k))
            .collect()
    }

    pub fn n_producers(&self) -> usize {
        self.wells
            .iter()
            .filter(|w| w.kind == WellKind::Producer)
            .count()
    }

    pub fn n_injectors(&self) -> usize {
        self.wells
            .iter()
            .filter(|w| w.kind == WellKind::Injector)
            .count()
    }

    /// Wells ordered producers first, then injectors; the order used by
    /// observation blocks and action vectors.
    pub fn ordered_wells(&self) -> Vec<&WellSpec> {
        let mut v: Vec<&WellSpec> = self.wells.iter().filter(|w| w.is_producer()).collect();
        v.extend(self.wells.iter().filter(|w| !w.is_producer()));
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return arg(format!("asset {}: grid dims must be >= 1", self.name));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dz > 0.0) {
            return arg(format!("asset {}: block sizes must be > 0", self.name));
        }
        if !(self.porosity > 0.0 && self.porosity < 1.0) {
            return arg(format!(
                "asset {}: porosity {} not in (0,1)",
                self.name, self.porosity
            ));
        }
        if !(self.kv_kh_ratio > 0.0) {
            return arg(format!("asset {}: kv/kh must be > 0", self.name));
        }
        if !(self.log_perm_variance >= 0.0) || !self.log_perm_mean.is_finite() {
            return arg(format!("asset {}: invalid ln-perm prior", self.name));
        }
        self.variogram.validate(self.is_3d())?;
        if self.wells.is_empty() {
            return arg(format!("asset {} has no wells", self.name));
        }
        let mut columns = HashSet::new();
        for w in &self.wells {
            w.validate(self.nx, self.ny, self.nz)?;
            if !columns.insert((w.i, w.j)) {
                return arg(format!(
                    "asset {}: two wells share column ({}, {})",
                    self.name, w.i, w.j
                ));
            }
        }
        self.validate_hard_data()
    }

    pub fn validate_hard_data(&self) -> Result<()> {
        let well_cells: HashSet<usize> =
            self.wells.iter().flat_map(|w| self.well_cells(w)).collect();
        let mut seen = HashSet::new();
        for d in &self.hard_data {
            if !well_cells.contains(&d.cell) {
                return arg(format!("hard datum at cell {} is not a well cell", d.cell));
            }
            if !seen.insert(d.cell) {
                return arg(format!("duplicate hard datum at cell {}", d.cell));
            }
            if !d.value.is_finite() {
                return arg(format!("non-finite hard datum at cell {}", d.cell));
            }
        }
        Ok(())
    }

    /// Draws one jointly correlated set of ln-perm values at every perforated
    /// well cell from the prior and stores it as hard data.
    pub fn with_sampled_hard_data(mut self, seed: u64) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        let cells: Vec<usize> = self.wells.iter().flat_map(|w| self.well_cells(w)).collect();
        let coords: Vec<_> = cells.iter().map(|&c| self.cell_coords(c)).collect();
        let var = self.log_perm_variance;
        let chol = Cholesky::factor_with(cells.len(), |a, b| {
            let (ia, ja, ka) = coords[a];
            let (ib, jb, kb) = coords[b];
            var * self.variogram.correlation_between(
                ia as f64 - ib as f64,
                ja as f64 - jb as f64,
                ka as f64 - kb as f64,
            ) + if a == b { 1e-10 } else { 0.0 }
        })
        .map_err(|e| Error::Generation(format!("hard-data prior: {e}")))?;
        let mut rng = rng_for(seed, &[self.asset_id as u64, 0xDA7A]);
        let w: Vec<f64> = (0..cells.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let z = chol.lower_mul(&w);
        self.hard_data = cells
            .iter()
            .zip(z)
            .map(|(&cell, v)| HardDatum {
                cell,
                value: self.log_perm_mean + v,
            })
            .collect();
        Ok(self)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geostat::VariogramKind;

    pub fn small_asset() -> AssetSpec {
        AssetSpec {
            asset_id: 1,
            name: "T".into(),
            nx: 8,
            ny: 6,
            nz: 1,
            dx: 60.0,
            dy: 60.0,
            dz: 12.0,
            wells: vec![
                WellSpec::producer("P1", 1, 1),
                WellSpec::producer("P2", 6, 4),
                WellSpec::injector("I1", 4, 2),
            ],
            variogram: VariogramModel::new(VariogramKind::Exponential, 4.0),
            log_perm_mean: DEFAULT_LOG_PERM_MEAN,
            log_perm_variance: DEFAULT_LOG_PERM_VARIANCE,
            porosity: 0.2,
            kv_kh_ratio: 0.1,
            hard_data: vec![],
        }
    }

    #[test]
    fn valid_asset_passes() {
        small_asset().validate().unwrap();
    }

    #[test]
    fn shared_column_rejected() {
        let mut a = small_asset();
        a.wells.push(WellSpec::injector("I2", 1, 1));
        assert!(a.validate().is_err());
    }

    #[test]
    fn well_outside_grid_rejected() {
        let mut a = small_asset();
        a.wells[0].i = 8;
        assert!(a.validate().is_err());
    }

    #[test]
    fn porosity_bounds() {
        let mut a = small_asset();
        a.porosity = 1.0;
        assert!(a.validate().is_err());
    }

    #[test]
    fn sampled_hard_data_at_well_cells() {
        let a = small_asset().with_sampled_hard_data(3).unwrap();
        assert_eq!(a.hard_data.len(), 3);
        a.validate().unwrap();
        let b = small_asset().with_sampled_hard_data(3).unwrap();
        assert_eq!(a.hard_data, b.hard_data);
    }

    #[test]
    fn cell_index_roundtrip() {
        let mut a = small_asset();
        a.nz = 3;
        for c in 0..a.n_cells() {
            let (i, j, k) = a.cell_coords(c);
            assert_eq!(a.cell_index(i, j, k), c);
        }
    }
}
