//! Built-in asset sets: the four reference assets A to D in 2D and 3D, and the
//! reduced two-asset desk preset.

use std::collections::HashSet;

use crate::geostat::{
    AssetSpec, VariogramKind, VariogramModel, DEFAULT_LOG_PERM_MEAN, DEFAULT_LOG_PERM_VARIANCE,
};
use crate::simulator::WellSpec;

/// Range in blocks, variogram type, producers, injectors.
pub const FOUR_ASSETS: [(&str, f64, VariogramKind, usize, usize); 4] = [
    ("A", 20.0, VariogramKind::Exponential, 5, 4),
    ("B", 25.0, VariogramKind::Exponential, 12, 4),
    ("C", 30.0, VariogramKind::Spherical, 8, 3),
    ("D", 25.0, VariogramKind::Spherical, 9, 5),
];

/// Areal size and layer count of the 3D assets.
pub const THREE_D_DIMS: [(usize, usize, usize); 4] =
    [(60, 60, 5), (65, 65, 4), (40, 40, 9), (50, 50, 7)];

fn halton(mut i: usize, base: usize) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Deterministic scattered well columns inside a margin, with injectors
/// interleaved evenly among producers.
pub fn scattered_wells(
    nx: usize,
    ny: usize,
    n_producers: usize,
    n_injectors: usize,
    offset: usize,
) -> Vec<WellSpec> {
    let n = n_producers + n_injectors;
    let (mx, my) = ((nx / 8).max(1), (ny / 8).max(1));
    let (sx, sy) = (
        nx.saturating_sub(2 * mx).max(1),
        ny.saturating_sub(2 * my).max(1),
    );
    let mut used = HashSet::new();
    let mut cols = Vec::with_capacity(n);
    let mut k = offset + 1;
    while cols.len() < n {
        let i = mx + ((halton(k, 2) * sx as f64) as usize).min(sx - 1);
        let j = my + ((halton(k, 3) * sy as f64) as usize).min(sy - 1);
        if used.insert((i, j)) {
            cols.push((i, j));
        }
        k += 1;
        assert!(k < offset + 100 * n + 1000, "grid too small for {n} wells");
    }
    let injector_slots: HashSet<usize> = (0..n_injectors)
        .map(|q| (2 * q + 1) * n / (2 * n_injectors))
        .collect();
    let (mut p, mut q) = (0, 0);
    cols.into_iter()
        .enumerate()
        .map(|(s, (i, j))| {
            if injector_slots.contains(&s) {
                q += 1;
                WellSpec::injector(format!("I{q}"), i, j)
            } else {
                p += 1;
                WellSpec::producer(format!("P{p}"), i, j)
            }
        })
        .collect()
}

fn asset(
    id: usize,
    name: &str,
    dims: (usize, usize, usize),
    dz: f64,
    variogram: VariogramModel,
    np: usize,
    ni: usize,
) -> AssetSpec {
    AssetSpec {
        asset_id: id,
        name: name.into(),
        nx: dims.0,
        ny: dims.1,
        nz: dims.2,
        dx: 60.0,
        dy: 60.0,
        dz,
        wells: scattered_wells(dims.0, dims.1, np, ni, 7 * id),
        variogram,
        log_perm_mean: DEFAULT_LOG_PERM_MEAN,
        log_perm_variance: DEFAULT_LOG_PERM_VARIANCE,
        porosity: 0.2,
        kv_kh_ratio: 0.1,
        hard_data: Vec::new(),
    }
}

/// 2D assets on 60×60 grids of 60×60×12 m blocks.
pub fn example_2d() -> Vec<AssetSpec> {
    FOUR_ASSETS
        .iter()
        .enumerate()
        .map(|(n, &(name, range, kind, np, ni))| {
            asset(
                n + 1,
                name,
                (60, 60, 1),
                12.0,
                VariogramModel::new(kind, range),
                np,
                ni,
            )
        })
        .collect()
}

/// Layered assets with 3 m blocks, a vertical range of three layers and
/// kv/kh of 0.1.
pub fn example_3d() -> Vec<AssetSpec> {
    FOUR_ASSETS
        .iter()
        .zip(THREE_D_DIMS)
        .enumerate()
        .map(|(n, (&(name, range, kind, np, ni), dims))| {
            let v = VariogramModel::new(kind, range).with_vertical_range(3.0);
            asset(n + 1, name, dims, 3.0, v, np, ni)
        })
        .collect()
}

/// Two 25×25 assets carrying the well counts of A and C with variogram
/// ranges scaled by 25/60.
pub fn desk_assets() -> Vec<AssetSpec> {
    [0, 2]
        .iter()
        .enumerate()
        .map(|(n, &src)| {
            let (name, range, kind, np, ni) = FOUR_ASSETS[src];
            let v = VariogramModel::new(kind, range * 25.0 / 60.0);
            asset(n + 1, name, (25, 25, 1), 12.0, v, np, ni)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_with_table_counts() {
        for set in [example_2d(), example_3d(), desk_assets()] {
            for a in &set {
                a.validate().unwrap();
            }
        }
        let counts: Vec<_> = example_2d()
            .iter()
            .map(|a| (a.n_producers(), a.n_injectors()))
            .collect();
        assert_eq!(counts, vec![(5, 4), (12, 4), (8, 3), (9, 5)]);
        let dims: Vec<_> = example_3d().iter().map(|a| (a.nx, a.ny, a.nz)).collect();
        assert_eq!(dims, THREE_D_DIMS.to_vec());
    }

    #[test]
    fn halton_matches_radical_inverse() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(5, 3) - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-15);
    }
}
