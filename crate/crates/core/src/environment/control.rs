//! Global well identifiers and the action-to-setting maps.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::geostat::AssetSpec;

/// Consecutive 1-based global well IDs per asset, in canonical well order
/// (producers, then injectors).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WellIdTable {
    pub blocks: Vec<Vec<usize>>,
}

impl WellIdTable {
    pub fn n_total(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn ids(&self, asset: usize) -> &[usize] {
        &self.blocks[asset]
    }

    /// Zero-based embedding rows for an asset.
    pub fn rows(&self, asset: usize) -> Vec<usize> {
        self.blocks[asset].iter().map(|id| id - 1).collect()
    }
}

pub fn build_well_ids(assets: &[AssetSpec]) -> Result<WellIdTable> {
    if assets.is_empty() {
        return arg("no assets to number");
    }
    let mut next = 1;
    let blocks = assets
        .iter()
        .map(|a| {
            let ids: Vec<usize> = (next..next + a.wells.len()).collect();
            next += a.wells.len();
            ids
        })
        .collect();
    Ok(WellIdTable { blocks })
}

/// Writes the global IDs into each asset's well specs.
pub fn assign_well_ids(assets: &mut [AssetSpec]) -> Result<WellIdTable> {
    let table = build_well_ids(assets)?;
    for (a, ids) in assets.iter_mut().zip(&table.blocks) {
        let order = canonical_order(a);
        for (&w, &id) in order.iter().zip(ids) {
            a.wells[w].well_id = id;
        }
    }
    Ok(table)
}

/// Indices into `asset.wells`, producers first.
pub fn canonical_order(asset: &AssetSpec) -> Vec<usize> {
    let mut v: Vec<usize> = (0..asset.wells.len())
        .filter(|&w| asset.wells[w].is_producer())
        .collect();
    v.extend((0..asset.wells.len()).filter(|&w| !asset.wells[w].is_producer()));
    v
}

/// BHP bounds `(lower, upper)` of one well.
pub type Bounds = (f64, f64);

pub fn max_relative_change((lb, ub): Bounds) -> f64 {
    (ub - lb) / lb
}

/// Relative-change update of one setting, clipped into its bounds.
pub fn apply_relative_change(u_prev: f64, a: f64, eps_c: f64, bounds: Bounds) -> f64 {
    let u = u_prev * (1.0 + a.clamp(-1.0, 1.0) * eps_c * max_relative_change(bounds));
    u.clamp(bounds.0, bounds.1)
}

pub fn apply_action(u_prev: &[f64], a: &[f64], eps_c: f64, bounds: &[Bounds]) -> Result<Vec<f64>> {
    if u_prev.len() != a.len() || a.len() != bounds.len() {
        return arg(format!(
            "action of {} entries for {} settings and {} bounds",
            a.len(),
            u_prev.len(),
            bounds.len()
        ));
    }
    if !(0.0..=1.0).contains(&eps_c) {
        return arg(format!("eps_c = {eps_c} outside [0, 1]"));
    }
    Ok(u_prev
        .iter()
        .zip(a)
        .zip(bounds)
        .map(|((&u, &ai), &b)| apply_relative_change(u, ai, eps_c, b))
        .collect())
}

/// Linear map of `[-1, 1]` onto the bounds, used at the first control step.
pub fn first_step_settings(a: &[f64], bounds: &[Bounds]) -> Result<Vec<f64>> {
    if a.len() != bounds.len() {
        return arg(format!(
            "action of {} entries for {} wells",
            a.len(),
            bounds.len()
        ));
    }
    Ok(a.iter()
        .zip(bounds)
        .map(|(&ai, &(lb, ub))| lb + (ai.clamp(-1.0, 1.0) + 1.0) / 2.0 * (ub - lb))
        .collect())
}
