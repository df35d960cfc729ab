//! Observation blocks and the global input layout.
//!
//! A single-asset block has `4 Np + 3 Ni` columns, grouped as producer oil
//! rates, producer watercuts, producer BHPs, injector rates, injector BHPs,
//! then the previous settings of every well. The global input places each
//! asset's block side by side and appends one `eps_c` column.

use serde::{Deserialize, Serialize};

use super::control::{canonical_order, Bounds};
use crate::error::{arg, Result};
use crate::geostat::AssetSpec;
use crate::simulator::{ReportInterval, WellReport};

/// Normalization data for one asset, in canonical well order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellScales {
    pub n_producers: usize,
    pub n_injectors: usize,
    pub bounds: Vec<Bounds>,
    pub max_rate: Vec<f64>,
}

impl WellScales {
    pub fn from_asset(asset: &AssetSpec) -> Self {
        let order = canonical_order(asset);
        Self {
            n_producers: asset.n_producers(),
            n_injectors: asset.n_injectors(),
            bounds: order
                .iter()
                .map(|&w| (asset.wells[w].bhp_lower, asset.wells[w].bhp_upper))
                .collect(),
            max_rate: order
                .iter()
                .map(|&w| asset.wells[w].max_liquid_rate)
                .collect(),
        }
    }

    pub fn n_wells(&self) -> usize {
        self.n_producers + self.n_injectors
    }

    pub fn block_width(&self) -> usize {
        4 * self.n_producers + 3 * self.n_injectors
    }
}

fn scale_bhp(v: f64, (lb, ub): Bounds) -> f64 {
    ((v - lb) / (ub - lb)).clamp(0.0, 1.0)
}

/// Builds the `n_d × block_width` block (row-major). `reports` carry wells in
/// canonical order; BHPs and settings are min-max scaled and clamped to
/// `[0, 1]`, rates divided by the well's liquid-rate cap.
pub fn normalize_observation(
    reports: &[Vec<WellReport>],
    u_prev: &[f64],
    scales: &WellScales,
) -> Result<Vec<f64>> {
    let (np, ni) = (scales.n_producers, scales.n_injectors);
    let nw = np + ni;
    if u_prev.len() != nw || reports.iter().any(|r| r.len() != nw) {
        return arg(format!(
            "observation for {nw} wells got mismatched report or setting lengths"
        ));
    }
    let width = scales.block_width();
    let mut out = Vec::with_capacity(reports.len() * width);
    for row in reports {
        for w in 0..np {
            out.push(row[w].oil_rate / scales.max_rate[w]);
        }
        for w in 0..np {
            out.push(row[w].watercut.clamp(0.0, 1.0));
        }
        for w in 0..np {
            out.push(scale_bhp(row[w].bhp, scales.bounds[w]));
        }
        for w in np..nw {
            out.push(row[w].injection_rate / scales.max_rate[w]);
        }
        for w in np..nw {
            out.push(scale_bhp(row[w].bhp, scales.bounds[w]));
        }
        for w in 0..nw {
            out.push(scale_bhp(u_prev[w], scales.bounds[w]));
        }
    }
    Ok(out)
}

/// Physical values recovered from a normalized block.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub reports: Vec<Vec<WellReport>>,
    pub u_prev: Vec<f64>,
}

/// Inverse of [`normalize_observation`] for in-bound values. Water rates of
/// producers are rebuilt from oil rate and watercut.
pub fn denormalize_observation(block: &[f64], scales: &WellScales) -> Result<RawObservation> {
    let (np, ni) = (scales.n_producers, scales.n_injectors);
    let nw = np + ni;
    let width = scales.block_width();
    if block.is_empty() || !block.len().is_multiple_of(width) {
        return arg(format!(
            "block of {} values is not a multiple of width {width}",
            block.len()
        ));
    }
    let unscale = |v: f64, (lb, ub): Bounds| lb + v * (ub - lb);
    let mut reports = Vec::new();
    let mut u_prev = Vec::new();
    for row in block.chunks(width) {
        let mut wells = vec![WellReport::default(); nw];
        for w in 0..np {
            let qo = row[w] * scales.max_rate[w];
            let wc = row[np + w];
            wells[w] = WellReport {
                oil_rate: qo,
                water_rate: if wc < 1.0 { qo * wc / (1.0 - wc) } else { 0.0 },
                injection_rate: 0.0,
                bhp: unscale(row[2 * np + w], scales.bounds[w]),
                watercut: wc,
            };
        }
        for k in 0..ni {
            let w = np + k;
            wells[w] = WellReport {
                injection_rate: row[3 * np + k] * scales.max_rate[w],
                bhp: unscale(row[3 * np + ni + k], scales.bounds[w]),
                ..Default::default()
            };
        }
        u_prev = (0..nw)
            .map(|w| unscale(row[3 * np + 2 * ni + w], scales.bounds[w]))
            .collect();
        reports.push(wells);
    }
    Ok(RawObservation { reports, u_prev })
}

/// Reorders simulator reports (asset well order) into canonical order.
pub fn canonical_reports(reports: &[ReportInterval], order: &[usize]) -> Vec<Vec<WellReport>> {
    reports
        .iter()
        .map(|r| order.iter().map(|&w| r.wells[w]).collect())
        .collect()
}

/// Column layout of the global input for an ordered list of assets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub n_d: usize,
    /// `(offset, width)` of each asset block.
    pub blocks: Vec<(usize, usize)>,
    pub width: usize,
}

impl InputLayout {
    pub fn new(assets: &[AssetSpec], n_d: usize) -> Result<Self> {
        if assets.is_empty() || n_d == 0 {
            return arg("layout needs at least one asset and n_d >= 1");
        }
        let mut offset = 0;
        let blocks = assets
            .iter()
            .map(|a| {
                let w = 4 * a.n_producers() + 3 * a.n_injectors();
                let b = (offset, w);
                offset += w;
                b
            })
            .collect();
        Ok(Self {
            n_d,
            blocks,
            width: offset + 1,
        })
    }

    /// Places one asset block into an otherwise zero `n_d × width` matrix and
    /// fills the final column with `eps_c`.
    pub fn assemble(&self, asset: usize, block: &[f64], eps_c: f64) -> Result<Vec<f64>> {
        let Some(&(offset, bw)) = self.blocks.get(asset) else {
            return arg(format!(
                "asset index {asset} outside layout of {}",
                self.blocks.len()
            ));
        };
        if block.len() != self.n_d * bw {
            return arg(format!(
                "block has {} values, expected {}x{bw}",
                block.len(),
                self.n_d
            ));
        }
        let mut x = vec![0.0; self.n_d * self.width];
        for (r, row) in block.chunks(bw).enumerate() {
            let base = r * self.width;
            x[base + offset..base + offset + bw].copy_from_slice(row);
            x[base + self.width - 1] = eps_c;
        }
        Ok(x)
    }
}
