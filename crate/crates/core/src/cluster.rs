//! K-means over pose features and the clustered linear-kernel k-DPP selector.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dpp::greedy_map_with_fill;
use crate::error::{Error, Result};
use crate::kernel::{build_kernel, FeatureMatrix, KernelKind};

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    /// `h x D`, one centroid per row.
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
    /// Inertia after each assignment step of the fitting loop.
    pub inertia_history: Vec<f64>,
}

impl Clustering {
    pub fn num_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    /// Member indices of every cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    let mut acc = 0.0;
    for d in 0..x.ncols() {
        let t = x[(i, d)] - c[(j, d)];
        acc += t * t;
    }
    acc
}

fn plus_plus_init(x: &DMatrix<f64>, h: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = x.nrows();
    let mut centroids = DMatrix::zeros(h, x.ncols());
    let first = rng.random_range(0..n);
    centroids.set_row(0, &x.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centroids, 0)).collect();
    for c in 1..h {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = i;
                    break;
                }
            }
            // Rounding can leave `target` past the last positive weight.
            if nearest[chosen] == 0.0 {
                chosen = nearest.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.set_row(c, &x.row(pick));
        for (i, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(x, i, &centroids, c));
        }
    }
    centroids
}

fn assign(x: &DMatrix<f64>, centroids: &DMatrix<f64>) -> Vec<usize> {
    (0..x.nrows())
        .map(|i| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..centroids.nrows() {
                let d = sq_dist(x, i, centroids, c);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn reseed_empty(x: &DMatrix<f64>, centroids: &mut DMatrix<f64>, assignments: &mut [usize]) {
    let h = centroids.nrows();
    loop {
        let mut sizes = vec![0usize; h];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut donor = None;
        let mut donor_d = -1.0;
        for i in 0..x.nrows() {
            if sizes[assignments[i]] < 2 {
                continue;
            }
            let d = sq_dist(x, i, centroids, assignments[i]);
            if d > donor_d {
                donor_d = d;
                donor = Some(i);
            }
        }
        let Some(p) = donor else { return };
        assignments[p] = empty;
        centroids.set_row(empty, &x.row(p));
    }
}

fn means(x: &DMatrix<f64>, assignments: &[usize], h: usize) -> DMatrix<f64> {
    let mut sums = DMatrix::zeros(h, x.ncols());
    let mut counts = vec![0usize; h];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for d in 0..x.ncols() {
            sums[(a, d)] += x[(i, d)];
        }
    }
    for c in 0..h {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for d in 0..x.ncols() {
                sums[(c, d)] *= inv;
            }
        }
    }
    sums
}

fn inertia_of(x: &DMatrix<f64>, centroids: &DMatrix<f64>, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(x, i, centroids, a))
        .sum()
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans(features: &FeatureMatrix, h: usize, seed: u64) -> Result<Clustering> {
    let x = features.matrix();
    let n = x.nrows();
    if h < 1 || h > n {
        return Err(Error::Parameter(format!(
            "cluster count must lie in [1, {n}], got {h}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(x, h, &mut rng);
    let mut assignments;
    let mut history = Vec::new();
    let mut iter = 0;
    loop {
        assignments = assign(x, &centroids);
        reseed_empty(x, &mut centroids, &mut assignments);
        history.push(inertia_of(x, &centroids, &assignments));
        let updated = means(x, &assignments, h);
        let movement = (0..h)
            .map(|c| {
                (0..x.ncols())
                    .map(|d| (updated[(c, d)] - centroids[(c, d)]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        centroids = updated;
        iter += 1;
        if movement < KMEANS_TOL || iter >= KMEANS_MAX_ITER {
            break;
        }
    }
    let inertia = inertia_of(x, &centroids, &assignments);
    Ok(Clustering {
        assignments,
        centroids,
        inertia,
        inertia_history: history,
    })
}

/// Per-cluster selection counts from one run of [`clustered_kdpp_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredSelection {
    /// Sorted, distinct row indices.
    pub indices: Vec<usize>,
    pub clustering: Clustering,
    /// Items taken from each cluster.
    pub per_cluster: Vec<usize>,
    /// Largest `k` passed to any single linear-kernel greedy call.
    pub max_k_requested: usize,
    /// Some cluster ran out of kernel rank and was topped up by lowest index.
    pub rank_fallback: bool,
}

/// Linear-kernel k-DPP with clustering: `h = max(1, ceil(quota / 3J))`
/// clusters, at most `3J` greedy picks per cluster per pass, clusters visited
/// largest first until `quota` items are chosen.
pub fn clustered_kdpp_select(
    features: &FeatureMatrix,
    quota: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    clustered_kdpp_select_detailed(features, quota, seed).map(|s| s.indices)
}

pub fn clustered_kdpp_select_detailed(
    features: &FeatureMatrix,
    quota: usize,
    seed: u64,
) -> Result<ClusteredSelection> {
    let n = features.nrows();
    if quota > n {
        return Err(Error::Parameter(format!("quota {quota} exceeds N = {n}")));
    }
    let ceiling = features.ncols();
    let h = quota.div_ceil(ceiling).max(1);
    let clustering = kmeans(features, h, seed)?;
    let members = clustering.members();

    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&a, &b| members[b].len().cmp(&members[a].len()).then(a.cmp(&b)));

    let mut remaining = quota;
    let mut taken = vec![false; n];
    let mut per_cluster = vec![0; h];
    let mut max_k_requested = 0;
    let mut rank_fallback = false;
    while remaining > 0 {
        let before = remaining;
        for &c in &order {
            if remaining == 0 {
                break;
            }
            let pool: Vec<usize> = members[c].iter().copied().filter(|&i| !taken[i]).collect();
            let want = ceiling.min(pool.len()).min(remaining);
            if want == 0 {
                continue;
            }
            let kernel = build_kernel(&features.select_rows(&pool), KernelKind::Linear)?;
            let picked = greedy_map_with_fill(&kernel, want)?;
            max_k_requested = max_k_requested.max(want);
            rank_fallback |= picked.rank_fallback;
            for local in picked.indices {
                taken[pool[local]] = true;
            }
            per_cluster[c] += want;
            remaining -= want;
        }
        if remaining == before {
            break;
        }
    }
    let indices: Vec<usize> = (0..n).filter(|&i| taken[i]).collect();
    Ok(ClusteredSelection {
        indices,
        clustering,
        per_cluster,
        max_k_requested,
        rank_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let f = features(&[
            vec![0.0, 0.0, 1.0],
            vec![2.0, 4.0, 1.0],
            vec![4.0, 2.0, 1.0],
        ]);
        let c = kmeans(&f, 1, 3).unwrap();
        assert_eq!(c.assignments, vec![0, 0, 0]);
        let row: Vec<f64> = c.centroids.row(0).iter().copied().collect();
        assert_eq!(row, vec![2.0, 2.0, 1.0]);
    }

    #[test]
    fn one_cluster_per_point() {
        let f = features(&[vec![0.0], vec![1.0], vec![5.0], vec![9.0]]);
        let c = kmeans(&f, 4, 11).unwrap();
        let mut sorted = c.assignments.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert_eq!(c.inertia, 0.0);
    }

    #[test]
    fn duplicates_never_leave_empty_clusters() {
        let f = features(&[vec![1.0], vec![1.0], vec![1.0], vec![2.0]]);
        let c = kmeans(&f, 4, 0).unwrap();
        assert!(c.members().iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn kmeans_rejects_bad_h() {
        let f = features(&[vec![0.0], vec![1.0]]);
        assert!(matches!(kmeans(&f, 3, 0), Err(Error::Parameter(_))));
        assert!(matches!(kmeans(&f, 0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn quota_equal_to_n_returns_everything() {
        let f = features(&[
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ]);
        assert_eq!(clustered_kdpp_select(&f, 3, 5).unwrap(), vec![0, 1, 2]);
        assert!(clustered_kdpp_select(&f, 4, 5).is_err());
        assert!(clustered_kdpp_select(&f, 0, 5).unwrap().is_empty());
    }

    #[test]
    fn identical_rows_fill_by_lowest_index() {
        let f = features(&vec![vec![1.0, 2.0, 1.0]; 5]);
        let sel = clustered_kdpp_select_detailed(&f, 3, 1).unwrap();
        assert_eq!(sel.indices, vec![0, 1, 2]);
        assert!(sel.rank_fallback);
    }
}
