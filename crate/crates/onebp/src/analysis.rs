//! Latent-type exploration: k-means over item embeddings and per-cluster
//! recommendation statistics.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataSplit;
use crate::error::{Error, Result};
use crate::eval::recommend_topk;
use crate::model::EmbeddingModel;

/// Result of Lloyd's algorithm over N points of dimension `dim`.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub k: usize,
    pub dim: usize,
    /// Cluster index per point.
    pub assignments: Vec<usize>,
    /// k x dim centroids, row-major.
    pub centroids: Vec<f64>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after each iteration's assignment step; non-increasing.
    pub inertia_per_iter: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm with k-means++ seeding from the given seed. Stops when
/// assignments are unchanged or after `max_iters`. Empty clusters are
/// re-seeded to the point farthest from its assigned centroid.
pub fn kmeans(
    points: &[f64],
    dim: usize,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Clustering> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch(format!(
            "point buffer of {} entries is not a multiple of dim {dim}",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if k == 0 || n < k {
        return Err(Error::InvalidConfig(format!(
            "need at least k={k} points, got {n}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plusplus_init(points, n, dim, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut inertia_per_iter = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;

        // Assignment step.
        let mut changed = false;
        let mut inertia = 0.0;
        for p in 0..n {
            let (best, dist) = nearest_centroid(&points[p * dim..(p + 1) * dim], &centroids, dim);
            if assignments[p] != best {
                assignments[p] = best;
                changed = true;
            }
            inertia += dist;
        }
        inertia_per_iter.push(inertia);
        if !changed {
            break;
        }

        // Update step: centroid = mean of members.
        let mut counts = vec![0usize; k];
        let mut sums = vec![0.0f64; k * dim];
        for (p, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&points[p * dim..(p + 1) * dim])
            {
                *s += v;
            }
        }
        let mut stolen: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, &s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s / counts[c] as f64;
                }
            } else {
                // Re-seed to the point farthest from its assigned centroid.
                let mut far_point = 0;
                let mut far_dist = -1.0;
                for p in 0..n {
                    if stolen.contains(&p) {
                        continue;
                    }
                    let d = sq_dist(
                        &points[p * dim..(p + 1) * dim],
                        &centroids[assignments[p] * dim..(assignments[p] + 1) * dim],
                    );
                    if d > far_dist {
                        far_dist = d;
                        far_point = p;
                    }
                }
                stolen.push(far_point);
                centroids[c * dim..(c + 1) * dim]
                    .copy_from_slice(&points[far_point * dim..(far_point + 1) * dim]);
            }
        }
    }

    Ok(Clustering {
        k,
        dim,
        inertia: *inertia_per_iter.last().unwrap(),
        assignments,
        centroids,
        inertia_per_iter,
        iterations,
    })
}

fn plusplus_init(points: &[f64], n: usize, dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);

    let mut min_dists = vec![0.0f64; n];
    for c in 1..k {
        let mut total = 0.0;
        for p in 0..n {
            let d = (0..c)
                .map(|ci| {
                    sq_dist(
                        &points[p * dim..(p + 1) * dim],
                        &centroids[ci * dim..(ci + 1) * dim],
                    )
                })
                .fold(f64::INFINITY, f64::min);
            min_dists[p] = d;
            total += d;
        }
        let chosen = if total > 0.0 {
            // D^2-weighted draw.
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (p, &d) in min_dists.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = p;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with a centroid.
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(&points[chosen * dim..(chosen + 1) * dim]);
    }
    centroids
}

fn nearest_centroid(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_dist {
            best_dist = d;
            best = c;
        }
    }
    (best, best_dist)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters a model's item embeddings.
pub fn cluster_items(
    model: &EmbeddingModel,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Clustering> {
    let points: Vec<f64> = model.item_matrix().iter().map(|&v| v as f64).collect();
    kmeans(&points, model.dim(), k, max_iters, seed)
}

/// Whose recommendation lists the cluster report summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportScope {
    SingleUser(u32),
    AllUsers,
}

/// Per-cluster share of recommended items, precision, and recall. Ratios with
/// zero denominators are reported as `None` (JSON null), not 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterStats {
    pub share: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub recommended: usize,
    pub hits: usize,
    pub test_items: usize,
}

/// Recommendation statistics bucketed by latent type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub list_len: usize,
    pub num_users: usize,
    /// Keyed by cluster index.
    pub clusters: BTreeMap<usize, ClusterStats>,
}

/// Buckets top-K recommendations and test items by cluster. The all-users
/// scope aggregates counts over evaluable users before computing ratios.
pub fn cluster_report(
    clustering: &Clustering,
    split: &DataSplit,
    model: &EmbeddingModel,
    scope: ReportScope,
    k_list: usize,
) -> Result<ClusterReport> {
    if clustering.assignments.len() != model.num_items() {
        return Err(Error::DimensionMismatch(format!(
            "clustering covers {} items, model has {}",
            clustering.assignments.len(),
            model.num_items()
        )));
    }
    let users: Vec<u32> = match scope {
        ReportScope::SingleUser(u) => {
            if !split.evaluable_users.contains(&u) {
                return Err(Error::InvalidConfig(format!("user {u} is not evaluable")));
            }
            vec![u]
        }
        ReportScope::AllUsers => split.evaluable_users.clone(),
    };
    if users.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }

    let k_clusters = clustering.k;
    let mut recommended = vec![0usize; k_clusters];
    let mut hits = vec![0usize; k_clusters];
    let mut test_counts = vec![0usize; k_clusters];

    for &user in &users {
        let recs = recommend_topk(model, &split.train, user, k_list)?;
        let test_items = split.test.items_of(user);
        for &item in &recs {
            let c = clustering.assignments[item as usize];
            recommended[c] += 1;
            if test_items.binary_search(&item).is_ok() {
                hits[c] += 1;
            }
        }
        for &item in test_items {
            test_counts[clustering.assignments[item as usize]] += 1;
        }
    }

    let total_recommended = k_list * users.len();
    let clusters = (0..k_clusters)
        .map(|c| {
            let stats = ClusterStats {
                share: recommended[c] as f64 / total_recommended as f64,
                precision: (recommended[c] > 0).then(|| hits[c] as f64 / recommended[c] as f64),
                recall: (test_counts[c] > 0).then(|| hits[c] as f64 / test_counts[c] as f64),
                recommended: recommended[c],
                hits: hits[c],
                test_items: test_counts[c],
            };
            (c, stats)
        })
        .collect();

    Ok(ClusterReport {
        k: k_clusters,
        list_len: k_list,
        num_users: users.len(),
        clusters,
    })
}

/// CSV export `item,cluster,dim0..dim{d-1}` for external plotting.
pub fn write_items_clustered_csv<W: Write>(
    model: &EmbeddingModel,
    clustering: &Clustering,
    mut out: W,
) -> Result<()> {
    write!(out, "item,cluster")?;
    for d in 0..model.dim() {
        write!(out, ",dim{d}")?;
    }
    writeln!(out)?;
    for item in 0..model.num_items() as u32 {
        write!(out, "{item},{}", clustering.assignments[item as usize])?;
        for &v in model.item_row(item) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
