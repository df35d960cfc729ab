//! Representative-realization selection by k-means on flow-response features.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::field::RealizationSet;
use crate::error::{arg, Error, Result};
use crate::rng::rng_for;

const MAX_LLOYD_ITERS: usize = 300;
const MAX_ATTEMPTS: u64 = 10;

/// Partition of an ensemble into clusters. Labels are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// For each cluster, the member nearest its centroid.
    pub centroid_members: Vec<usize>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroid_members.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(r, _)| r)
            .collect()
    }

    pub fn is_centroid(&self, r: usize) -> bool {
        self.centroid_members.contains(&r)
    }
}

/// Standardizes each feature column to zero mean and unit variance; constant
/// columns become zero.
pub fn standardize(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if features.is_empty() {
        return Vec::new();
    }
    let d = features[0].len();
    let n = features.len() as f64;
    let mut out = features.to_vec();
    for f in 0..d {
        let mean = features.iter().map(|x| x[f]).sum::<f64>() / n;
        let var = features.iter().map(|x| (x[f] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for row in out.iter_mut() {
            row[f] = if sd > 0.0 { (row[f] - mean) / sd } else { 0.0 };
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `set` into `k` groups using per-realization feature vectors.
pub fn cluster_realizations(
    set: &RealizationSet,
    k: usize,
    features: &[Vec<f64>],
    seed: u64,
) -> Result<ClusterAssignment> {
    if features.len() != set.len() {
        return arg(format!(
            "{} feature vectors for {} realizations",
            features.len(),
            set.len()
        ));
    }
    kmeans(features, k, seed)
}

/// k-means with k-means++ seeding on standardized features; retries with a new
/// seed when a cluster ends up empty.
pub fn kmeans(features: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = features.len();
    if k == 0 || k > n {
        return arg(format!("k = {k} must be in [1, {n}]"));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return arg("feature vectors differ in length");
    }
    let x = standardize(features);
    for attempt in 0..MAX_ATTEMPTS {
        if let Some(a) = lloyd(&x, k, seed, attempt) {
            return Ok(a);
        }
    }
    Err(Error::Clustering(format!(
        "empty cluster persisted after {MAX_ATTEMPTS} attempts (k = {k}, n = {n})"
    )))
}

fn lloyd(x: &[Vec<f64>], k: usize, seed: u64, attempt: u64) -> Option<ClusterAssignment> {
    let n = x.len();
    let d = x[0].len();
    let mut rng = rng_for(seed, &[attempt]);

    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = vec![x[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = x.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if w > 0.0 && t < w {
                    chosen = i;
                    break;
                }
                t -= w;
            }
            while dist[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(x[pick].clone());
        for (i, p) in x.iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, p) in x.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in x.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }

    let centroid_members = (0..k)
        .map(|c| {
            (0..n)
                .filter(|&i| labels[i] == c)
                .min_by(|&a, &b| {
                    sq_dist(&x[a], &centers[c]).total_cmp(&sq_dist(&x[b], &centers[c]))
                })
                .unwrap()
        })
        .collect();
    Some(ClusterAssignment {
        labels,
        centroid_members,
    })
}
