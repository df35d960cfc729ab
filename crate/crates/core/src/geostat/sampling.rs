use rand::seq::index::sample;
use rand::Rng;

use super::cluster::ClusterAssignment;

/// Draws `per_cluster` non-centroid realizations from every cluster: without
/// replacement when the pool is large enough, with replacement otherwise.
/// Clusters whose only member is the centroid contribute nothing.
pub fn sample_training_batch<R: Rng + ?Sized>(
    assignment: &ClusterAssignment,
    per_cluster: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(assignment.k() * per_cluster);
    for c in 0..assignment.k() {
        let pool: Vec<usize> = assignment
            .members(c)
            .into_iter()
            .filter(|&r| r != assignment.centroid_members[c])
            .collect();
        draw(&pool, per_cluster, rng, &mut out);
    }
    out
}

/// Global sampling: cluster `c` of every asset is pooled into one global
/// cluster, and `per_cluster` (asset, realization) pairs are drawn from each.
pub fn sample_global_batch<R: Rng + ?Sized>(
    assignments: &[ClusterAssignment],
    per_cluster: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let k = assignments.iter().map(|a| a.k()).max().unwrap_or(0);
    let mut out = Vec::with_capacity(k * per_cluster);
    for c in 0..k {
        let pool: Vec<(usize, usize)> = assignments
            .iter()
            .enumerate()
            .filter(|(_, a)| c < a.k())
            .flat_map(|(n, a)| {
                a.members(c)
                    .into_iter()
                    .filter(move |&r| r != a.centroid_members[c])
                    .map(move |r| (n, r))
            })
            .collect();
        draw(&pool, per_cluster, rng, &mut out);
    }
    out
}

fn draw<T: Copy, R: Rng + ?Sized>(pool: &[T], n: usize, rng: &mut R, out: &mut Vec<T>) {
    if pool.is_empty() {
        return;
    }
    if pool.len() >= n {
        out.extend(sample(rng, pool.len(), n).into_iter().map(|i| pool[i]));
    } else {
        out.extend((0..n).map(|_| pool[rng.random_range(0..pool.len())]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assignment(sizes: &[usize]) -> ClusterAssignment {
        let mut labels = Vec::new();
        let mut centroid_members = Vec::new();
        for (c, &s) in sizes.iter().enumerate() {
            centroid_members.push(labels.len());
            labels.extend(std::iter::repeat_n(c, s));
        }
        ClusterAssignment {
            labels,
            centroid_members,
        }
    }

    #[test]
    fn exhaustive_draw_returns_all_non_centroids() {
        let a = assignment(&[5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut got = sample_training_batch(&a, 4, &mut rng);
        got.sort();
        assert_eq!(got, vec![1, 2, 3, 4]);
    }

    #[test]
    fn forty_by_four() {
        let a = assignment(&[25; 40]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_training_batch(&a, 4, &mut rng).len(), 160);
    }

    #[test]
    fn centroids_never_drawn() {
        let a = assignment(&[3, 2, 6, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hits = 0;
        for _ in 0..1000 {
            hits += sample_training_batch(&a, 3, &mut rng)
                .iter()
                .filter(|&&r| a.is_centroid(r))
                .count();
        }
        assert_eq!(hits, 0);
    }

    #[test]
    fn small_cluster_uses_replacement() {
        let a = assignment(&[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_training_batch(&a, 4, &mut rng), vec![1, 1, 1, 1]);
    }

    #[test]
    fn global_pools_by_cluster_index() {
        let a = assignment(&[4, 4]);
        let b = assignment(&[3, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let got = sample_global_batch(&[a.clone(), b.clone()], 5, &mut rng);
        assert_eq!(got.len(), 10);
        for (c, chunk) in got.chunks(5).enumerate() {
            for &(n, r) in chunk {
                let asg = if n == 0 { &a } else { &b };
                assert_eq!(asg.labels[r], c);
                assert!(!asg.is_centroid(r));
            }
        }
    }
}
