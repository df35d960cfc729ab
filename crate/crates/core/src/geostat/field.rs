//! Conditioned Gaussian ln-permeability fields.
//!
//! Small grids use an exact dense Cholesky factorization of the covariance
//! matrix with simple-kriging residual conditioning; large grids fall back to
//! sequential Gaussian simulation with a bounded search neighbourhood.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::asset::{AssetSpec, HardDatum};
use crate::container::ArrayStack;
use crate::error::{arg, Error, Result};
use crate::rng::rng_for;

/// Diagonal jitter added to every covariance matrix before factorization.
pub const COVARIANCE_JITTER: f64 = 1e-10;

/// Largest grid handled by the dense factorization under `Method::Auto`.
pub const DENSE_CELL_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Auto,
    Cholesky,
    Sequential,
}

/// Ensemble of ln-permeability fields for one asset.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationSet {
    pub asset_id: usize,
    pub dims: (usize, usize, usize),
    pub fields: Vec<Vec<f64>>,
    pub hard_data: Vec<HardDatum>,
    pub seed: u64,
}

impl RealizationSet {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Permeability in md of realization `r`.
    pub fn permeability(&self, r: usize) -> Vec<f64> {
        self.fields[r].iter().map(|v| v.exp()).collect()
    }

    /// Writes `realizations.bin` plus an `asset.json` sidecar into `dir`.
    pub fn save(&self, spec: &AssetSpec, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (nx, ny, nz) = self.dims;
        let stack = ArrayStack {
            dims: vec![nz, ny, nx],
            seed: self.seed,
            items: self.fields.clone(),
        };
        stack.write_to(BufWriter::new(File::create(dir.join("realizations.bin"))?))?;
        let mut spec = spec.clone();
        spec.hard_data = self.hard_data.clone();
        serde_json::to_writer_pretty(File::create(dir.join("asset.json"))?, &spec)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(AssetSpec, Self)> {
        let load_err = |p: &Path, e: String| Error::Load {
            path: p.to_path_buf(),
            message: e,
        };
        let spec_path = dir.join("asset.json");
        let spec: AssetSpec = serde_json::from_reader(BufReader::new(
            File::open(&spec_path).map_err(|e| load_err(&spec_path, e.to_string()))?,
        ))
        .map_err(|e| load_err(&spec_path, e.to_string()))?;
        let bin_path = dir.join("realizations.bin");
        let stack = ArrayStack::read_from(BufReader::new(
            File::open(&bin_path).map_err(|e| load_err(&bin_path, e.to_string()))?,
        ))?;
        if stack.dims != [spec.nz, spec.ny, spec.nx] {
            return Err(load_err(
                &bin_path,
                format!("dims {:?} disagree with asset grid", stack.dims),
            ));
        }
        let set = Self {
            asset_id: spec.asset_id,
            dims: (spec.nx, spec.ny, spec.nz),
            fields: stack.items,
            hard_data: spec.hard_data.clone(),
            seed: stack.seed,
        };
        Ok((spec, set))
    }
}

/// Dense lower-triangular Cholesky factor, row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor_with(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                let s = entry(i, j) - dot;
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Generation(format!(
                            "covariance not positive definite at pivot {i} ({s:e})"
                        )));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `L · w`.
    pub fn lower_mul(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                self.l[i * n..i * n + i + 1]
                    .iter()
                    .zip(w)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Solves `(L Lᵀ) x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let s: f64 = self.l[i * n..i * n + i]
                .iter()
                .zip(&b[..i])
                .map(|(a, x)| a * x)
                .sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}

fn covariance_between(spec: &AssetSpec, a: usize, b: usize) -> f64 {
    let (ia, ja, ka) = spec.cell_coords(a);
    let (ib, jb, kb) = spec.cell_coords(b);
    spec.log_perm_variance
        * spec.variogram.correlation_between(
            ia as f64 - ib as f64,
            ja as f64 - jb as f64,
            ka as f64 - kb as f64,
        )
}

/// Generates `count` realizations, each exactly honoring `spec.hard_data`.
pub fn generate_realizations(spec: &AssetSpec, count: usize, seed: u64) -> Result<RealizationSet> {
    generate_with(spec, count, seed, Method::Auto)
}

pub fn generate_with(
    spec: &AssetSpec,
    count: usize,
    seed: u64,
    method: Method,
) -> Result<RealizationSet> {
    if count == 0 {
        return arg("realization count must be >= 1");
    }
    spec.validate()?;
    let method = match method {
        Method::Auto if spec.n_cells() <= DENSE_CELL_LIMIT => Method::Cholesky,
        Method::Auto => Method::Sequential,
        m => m,
    };
    let fields = match method {
        Method::Cholesky => cholesky_fields(spec, count, seed)?,
        _ => sequential_fields(spec, count, seed)?,
    };
    Ok(RealizationSet {
        asset_id: spec.asset_id,
        dims: (spec.nx, spec.ny, spec.nz),
        fields,
        hard_data: spec.hard_data.clone(),
        seed,
    })
}

fn cholesky_fields(spec: &AssetSpec, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = spec.n_cells();
    let chol = Cholesky::factor_with(n, |a, b| {
        covariance_between(spec, a, b) + if a == b { COVARIANCE_JITTER } else { 0.0 }
    })?;

    // Simple-kriging weights of every cell on the hard data: row x holds C_xD C_DD⁻¹.
    let data = &spec.hard_data;
    let m = data.len();
    let weights: Vec<Vec<f64>> = if m == 0 {
        Vec::new()
    } else {
        let cdd = Cholesky::factor_with(m, |a, b| {
            covariance_between(spec, data[a].cell, data[b].cell)
                + if a == b { COVARIANCE_JITTER } else { 0.0 }
        })?;
        (0..n)
            .into_par_iter()
            .map(|x| {
                let mut c: Vec<f64> = data
                    .iter()
                    .map(|d| covariance_between(spec, x, d.cell))
                    .collect();
                cdd.solve_in_place(&mut c);
                c
            })
            .collect()
    };

    let mean = spec.log_perm_mean;
    Ok((0..count)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, &[r as u64]);
            let w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut z = chol.lower_mul(&w);
            if m > 0 {
                let resid: Vec<f64> = data.iter().map(|d| d.value - mean - z[d.cell]).collect();
                for (zx, wx) in z.iter_mut().zip(&weights) {
                    *zx += wx.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let mut field: Vec<f64> = z.into_iter().map(|v| v + mean).collect();
            for d in data {
                field[d.cell] = d.value;
            }
            field
        })
        .collect())
}

/// Maximum number of previously simulated neighbours in the kriging system.
const SGS_MAX_NEIGHBORS: usize = 16;

fn sequential_fields(spec: &AssetSpec, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    (0..count)
        .into_par_iter()
        .map(|r| sequential_one(spec, seed, r))
        .collect()
}

fn sequential_one(spec: &AssetSpec, seed: u64, r: usize) -> Result<Vec<f64>> {
    let n = spec.n_cells();
    let mean = spec.log_perm_mean;
    let var = spec.log_perm_variance;
    let mut rng = rng_for(seed, &[r as u64, 0x5635]);
    let mut field = vec![f64::NAN; n];
    let mut known = vec![false; n];
    for d in &spec.hard_data {
        field[d.cell] = d.value;
        known[d.cell] = true;
    }
    let mut path: Vec<usize> = (0..n).filter(|&c| !known[c]).collect();
    path.shuffle(&mut rng);

    let reach_h = (spec.variogram.horizontal_range.ceil() as isize).clamp(2, 24);
    let reach_v = (spec.variogram.vertical_range.unwrap_or(1.0).ceil() as isize).clamp(1, 8);
    for &cell in &path {
        let (ci, cj, ck) = spec.cell_coords(cell);
        let mut neigh: Vec<(f64, usize)> = Vec::new();
        for dk in -reach_v..=reach_v {
            let k = ck as isize + dk;
            if k < 0 || k >= spec.nz as isize {
                continue;
            }
            for dj in -reach_h..=reach_h {
                let j = cj as isize + dj;
                if j < 0 || j >= spec.ny as isize {
                    continue;
                }
                for di in -reach_h..=reach_h {
                    let i = ci as isize + di;
                    if i < 0 || i >= spec.nx as isize {
                        continue;
                    }
                    let other = spec.cell_index(i as usize, j as usize, k as usize);
                    if known[other] {
                        let rho = spec
                            .variogram
                            .correlation_between(di as f64, dj as f64, dk as f64);
                        neigh.push((-rho, other));
                    }
                }
            }
        }
        neigh.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        neigh.truncate(SGS_MAX_NEIGHBORS);
        neigh.retain(|(rho, _)| *rho < 0.0);

        let (mut mu, mut sk_var) = (mean, var);
        if !neigh.is_empty() {
            let idx: Vec<usize> = neigh.iter().map(|&(_, c)| c).collect();
            let k = idx.len();
            let chol = Cholesky::factor_with(k, |a, b| {
                covariance_between(spec, idx[a], idx[b])
                    + if a == b { COVARIANCE_JITTER } else { 0.0 }
            })?;
            let c0: Vec<f64> = idx
                .iter()
                .map(|&o| covariance_between(spec, cell, o))
                .collect();
            let mut lambda = c0.clone();
            chol.solve_in_place(&mut lambda);
            mu += lambda
                .iter()
                .zip(&idx)
                .map(|(l, &o)| l * (field[o] - mean))
                .sum::<f64>();
            sk_var = (var - lambda.iter().zip(&c0).map(|(l, c)| l * c).sum::<f64>()).max(0.0);
        }
        let e: f64 = StandardNormal.sample(&mut rng);
        field[cell] = mu + sk_var.sqrt() * e;
        known[cell] = true;
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geostat::asset::tests::small_asset;
    use crate::geostat::{VariogramKind, VariogramModel};

    fn strip(range: f64, kind: VariogramKind) -> AssetSpec {
        let mut a = small_asset();
        a.nx = 24;
        a.ny = 1;
        a.wells = vec![
            crate::simulator::WellSpec::producer("P", 23, 0),
            crate::simulator::WellSpec::injector("I", 0, 0),
        ];
        a.variogram = VariogramModel::new(kind, range);
        a
    }

    #[test]
    fn single_hard_datum_is_honoured_bitwise() {
        let mut a = small_asset();
        a.hard_data = vec![HardDatum {
            cell: a.cell_index(4, 2, 0),
            value: 5.123_456_789,
        }];
        let set = generate_realizations(&a, 25, 11).unwrap();
        for f in &set.fields {
            assert_eq!(
                f[a.cell_index(4, 2, 0)].to_bits(),
                5.123_456_789f64.to_bits()
            );
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = small_asset().with_sampled_hard_data(1).unwrap();
        let s1 = generate_realizations(&a, 4, 99).unwrap();
        let s2 = generate_realizations(&a, 4, 99).unwrap();
        let s3 = generate_realizations(&a, 4, 100).unwrap();
        assert_eq!(s1, s2);
        assert_ne!(s1.fields, s3.fields);
    }

    #[test]
    fn empirical_moments_match_model() {
        // Monte-Carlo correlogram oracle on a 1D strip.
        let a = strip(8.0, VariogramKind::Exponential);
        let set = generate_realizations(&a, 10_000, 5).unwrap();
        let n = set.len() as f64;
        let col = |c: usize| set.fields.iter().map(move |f| f[c] - 4.0);
        let var0: f64 = col(3).map(|v| v * v).sum::<f64>() / n;
        assert!((var0 - 1.0).abs() < 0.05, "variance {var0}");
        for (lag, expect) in [(4usize, (-1.5f64).exp()), (8, (-3.0f64).exp())] {
            let cov: f64 = col(3).zip(col(3 + lag)).map(|(x, y)| x * y).sum::<f64>() / n;
            assert!((cov - expect).abs() < 0.05, "lag {lag}: {cov} vs {expect}");
        }
    }

    #[test]
    fn spherical_decorrelates_beyond_range() {
        let a = strip(6.0, VariogramKind::Spherical);
        let set = generate_realizations(&a, 10_000, 8).unwrap();
        let n = set.len() as f64;
        let cov: f64 = set
            .fields
            .iter()
            .map(|f| (f[2] - 4.0) * (f[10] - 4.0))
            .sum::<f64>()
            / n;
        assert!(cov.abs() < 0.05, "{cov}");
    }

    #[test]
    fn sequential_honours_data_and_is_deterministic() {
        let a = small_asset().with_sampled_hard_data(4).unwrap();
        let s1 = generate_with(&a, 3, 7, Method::Sequential).unwrap();
        let s2 = generate_with(&a, 3, 7, Method::Sequential).unwrap();
        assert_eq!(s1, s2);
        for f in &s1.fields {
            assert!(f.iter().all(|v| v.is_finite()));
            for d in &a.hard_data {
                assert_eq!(f[d.cell].to_bits(), d.value.to_bits());
            }
        }
    }

    #[test]
    fn sequential_marginal_variance_is_reasonable() {
        let a = strip(6.0, VariogramKind::Spherical);
        let set = generate_with(&a, 3000, 2, Method::Sequential).unwrap();
        let n = set.len() as f64;
        let var: f64 = set
            .fields
            .iter()
            .map(|f| (f[12] - 4.0).powi(2))
            .sum::<f64>()
            / n;
        assert!((var - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn save_load_roundtrip() {
        let a = small_asset().with_sampled_hard_data(2).unwrap();
        let set = generate_realizations(&a, 3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save(&a, dir.path()).unwrap();
        let (spec, back) = RealizationSet::load(dir.path()).unwrap();
        assert_eq!(spec, a);
        assert_eq!(back, set);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(generate_realizations(&small_asset(), 0, 1).is_err());
    }

    #[test]
    fn hard_data_off_well_rejected() {
        let mut a = small_asset();
        a.hard_data = vec![HardDatum {
            cell: 0,
            value: 1.0,
        }];
        assert!(generate_realizations(&a, 1, 1).is_err());
    }
}
