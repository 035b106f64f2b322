//! Seeded K-means with k-means++ seeding and Lloyd refinement.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, stream_rng, streams, BmcRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Lloyd stops once the relative change in inertia falls below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 300, tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// `k x d`, one centroid per row.
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
}

/// Clusters the rows of `points` into `k` groups. Restarts run in parallel;
/// the lowest inertia wins, ties going to the earlier restart.
pub fn kmeans(points: &DMatrix<f64>, k: usize, cfg: &KMeansConfig, seed: u64) -> KMeansResult {
    assert!(k >= 1 && k <= points.nrows(), "need 1 <= k <= number of points");
    let restarts = cfg.restarts.max(1);
    let runs: Vec<KMeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(derive_seed(seed, r as u64), streams::KMEANS);
            lloyd(points, plus_plus(points, k, &mut rng), cfg)
        })
        .collect();
    runs.into_iter()
        .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
        .expect("at least one restart")
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols()).map(|d| (points[(i, d)] - centroids[(c, d)]).powi(2)).sum()
}

fn plus_plus(points: &DMatrix<f64>, k: usize, rng: &mut BmcRng) -> DMatrix<f64> {
    let (n, dim) = points.shape();
    let mut centroids = DMatrix::zeros(k, dim);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from(&points.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from(&points.row(pick));
        for (i, d) in closest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for c in 0..centroids.nrows() {
            let d = sq_dist(points, i, centroids, c);
            if d < best.0 {
                best = (d, c);
            }
        }
        *label = best.1;
        inertia += best.0;
    }
    inertia
}

fn lloyd(points: &DMatrix<f64>, mut centroids: DMatrix<f64>, cfg: &KMeansConfig) -> KMeansResult {
    let (n, dim) = points.shape();
    let k = centroids.nrows();
    let mut labels = vec![0; n];
    let mut inertia = assign(points, &centroids, &mut labels);
    for _ in 0..cfg.max_iter {
        let mut sums = DMatrix::<f64>::zeros(k, dim);
        let mut sizes = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            sizes[c] += 1;
            for d in 0..dim {
                sums[(c, d)] += points[(i, d)];
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                for d in 0..dim {
                    centroids[(c, d)] = sums[(c, d)] / sizes[c] as f64;
                }
            } else {
                // Re-seed an empty centroid at the point farthest from its own.
                let far = (0..n)
                    .map(|i| (sq_dist(points, i, &centroids, labels[i]), i))
                    .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
                    .1;
                centroids.row_mut(c).copy_from(&points.row(far));
            }
        }
        let next = assign(points, &centroids, &mut labels);
        let change = (inertia - next).abs();
        inertia = next;
        if inertia == 0.0 || change <= cfg.tol * inertia {
            break;
        }
    }
    KMeansResult { labels, centroids, inertia }
}
