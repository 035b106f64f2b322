//! Two-step cluster recovery: a rank-`m` spectral step followed by
//! likelihood-based improvement passes, plus evaluation against ground truth.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::{frequency_matrix, CountMatrix};
use crate::error::{BmcError, Result};
use crate::kmeans::{kmeans, KMeansConfig};
use crate::linalg::{truncated_svd_dense, truncated_svd_iterative};
use crate::matching::min_cost_assignment;
use crate::model::{ClusterModel, StateKernel};
use crate::rng::derive_seed;
use crate::simulate::{default_length, make_perturbation, sample_perturbed_bmc, PerturbationSpec, Start};

/// Dense SVD is used up to this many states, subspace iteration beyond.
pub const DENSE_SVD_LIMIT: usize = 600;

/// Attempts with fresh K-means seeds when improvement empties a cluster.
pub const MAX_RESTARTS: usize = 5;

/// Warnings attached to an assignment. Not serialized with the labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AssignmentFlags {
    /// Fewer than `m` nonzero singular values were available.
    pub rank_deficient: bool,
    /// Clusters that ended up without states.
    pub empty_clusters: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawAssignment {
    n: usize,
    m: usize,
    labels: Vec<usize>,
}

/// A map from `n` states to `m` clusters. JSON: `{"n":..,"m":..,"labels":[..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAssignment", into = "RawAssignment")]
pub struct ClusterAssignment {
    m: usize,
    labels: Vec<usize>,
    flags: AssignmentFlags,
}

impl TryFrom<RawAssignment> for ClusterAssignment {
    type Error = BmcError;
    fn try_from(raw: RawAssignment) -> Result<Self> {
        if raw.labels.len() != raw.n {
            return Err(BmcError::DimensionMismatch { expected: raw.n, found: raw.labels.len() });
        }
        ClusterAssignment::new(raw.m, raw.labels)
    }
}

impl From<ClusterAssignment> for RawAssignment {
    fn from(a: ClusterAssignment) -> Self {
        RawAssignment { n: a.labels.len(), m: a.m, labels: a.labels }
    }
}

impl ClusterAssignment {
    pub fn new(m: usize, labels: Vec<usize>) -> Result<Self> {
        if m == 0 {
            return Err(BmcError::InvalidParameter("m must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(BmcError::InvalidParameter(format!("label {bad} >= m = {m}")));
        }
        let mut a = Self { m, labels, flags: AssignmentFlags::default() };
        a.flags.empty_clusters = a.sizes().iter().enumerate().filter(|(_, &s)| s == 0).map(|(k, _)| k).collect();
        Ok(a)
    }

    pub fn from_model(model: &ClusterModel) -> Self {
        Self { m: model.m(), labels: model.sigma().to_vec(), flags: AssignmentFlags::default() }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn flags(&self) -> &AssignmentFlags {
        &self.flags
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.m];
        self.labels.iter().for_each(|&l| s[l] += 1);
        s
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.m];
        self.labels.iter().enumerate().for_each(|(state, &k)| out[k].push(state));
        out
    }
}

/// Cluster-level parameters estimated from counts and an assignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatedBmcParams {
    /// `#V_a / n`
    pub alpha: Vec<f64>,
    /// `N(V_a, [n]) / l`
    pub pi_hat: Vec<f64>,
    /// `N(V_a, V_b) / N(V_a, [n])`
    pub p_hat: Vec<Vec<f64>>,
}

/// Spectral step: K-means on the rows of the rank-`m` approximation of the
/// count matrix concatenated with the rows of its transpose.
///
/// With `N ≈ U S V^T`, row `i` of the approximation is `U_i S V^T` and row
/// `i` of its transpose is `V_i S U^T`. Since `U` and `V` have orthonormal
/// columns, pairwise distances between these `2n`-dimensional points equal
/// those between the `2m`-dimensional points `[U_i S, V_i S]`, which is what
/// K-means is run on.
pub fn spectral_cluster(counts: &CountMatrix, m: usize, cfg: &KMeansConfig, seed: u64) -> Result<ClusterAssignment> {
    let n = counts.n();
    if m == 0 || m > n {
        return Err(BmcError::InvalidParameter(format!("need 1 <= m <= n, got m = {m}, n = {n}")));
    }
    if counts.total() == 0 {
        return Err(BmcError::InvalidParameter("count matrix is empty".into()));
    }
    if m == 1 {
        return ClusterAssignment::new(1, vec![0; n]);
    }
    let svd = if n <= DENSE_SVD_LIMIT {
        truncated_svd_dense(&counts.to_dense(), m)
    } else {
        truncated_svd_iterative(counts, m, derive_seed(seed, u64::MAX))
    };
    let floor = svd.s[0] * n as f64 * f64::EPSILON;
    let rank = svd.s.iter().filter(|&&s| s > floor).count();
    let mut embedding = DMatrix::zeros(n, 2 * m);
    for i in 0..n {
        for c in 0..rank {
            embedding[(i, c)] = svd.u[(i, c)] * svd.s[c];
            embedding[(i, m + c)] = svd.v[(i, c)] * svd.s[c];
        }
    }
    let result = kmeans(&embedding, m, cfg, seed);
    let mut assignment = ClusterAssignment::new(m, result.labels)?;
    assignment.flags.rank_deficient = rank < m;
    Ok(assignment)
}

/// Counts from every state into each cluster and from each cluster into
/// every state: `out[x][k] = N(x, V_k)`, `inc[x][k] = N(V_k, x)`.
fn state_cluster_counts(counts: &CountMatrix, labels: &[usize], m: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = counts.n();
    let mut out = vec![vec![0.0; m]; n];
    let mut inc = vec![vec![0.0; m]; n];
    for &(i, j, c) in counts.entries() {
        out[i][labels[j]] += c as f64;
        inc[j][labels[i]] += c as f64;
    }
    (out, inc)
}

/// `c * ln(x)` with `0 * ln(0) = 0`.
fn xlogy(c: f64, x: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * x.ln()
    }
}

/// One batch improvement pass: parameters come from the input assignment
/// and every state moves to the cluster maximizing
/// `sum_k [N(x,V_k) ln p_lk + N(V_k,x) ln(p_kl / alpha_l)] - (l/n) pi_l / alpha_l`.
///
/// Ties go to the lowest cluster id. A state for which every candidate
/// scores `-inf` keeps its label. Emptied clusters are reported in the
/// flags of the result.
pub fn improve(counts: &CountMatrix, path_length: usize, assignment: &ClusterAssignment) -> Result<ClusterAssignment> {
    if counts.n() != assignment.n() {
        return Err(BmcError::DimensionMismatch { expected: counts.n(), found: assignment.n() });
    }
    if path_length < 2 {
        return Err(BmcError::PathTooShort { len: path_length, min: 2 });
    }
    let m = assignment.m();
    if m == 1 {
        return Ok(assignment.clone());
    }
    let params = estimate_params(counts, path_length, assignment)?;
    let (out, inc) = state_cluster_counts(counts, assignment.labels(), m);
    let penalty_scale = path_length as f64 / counts.n() as f64;
    let labels = (0..counts.n())
        .map(|x| {
            let mut best = (f64::NEG_INFINITY, assignment.labels()[x]);
            for l in 0..m {
                let alpha = params.alpha[l];
                let mut score = -penalty_scale * params.pi_hat[l] / alpha;
                for k in 0..m {
                    score += xlogy(out[x][k], params.p_hat[l][k]);
                    score += xlogy(inc[x][k], params.p_hat[k][l] / alpha);
                }
                if score > best.0 {
                    best = (score, l);
                }
            }
            best.1
        })
        .collect();
    let mut next = ClusterAssignment::new(m, labels)?;
    next.flags.rank_deficient = assignment.flags.rank_deficient;
    Ok(next)
}

/// Spectral clustering followed by up to `iterations` improvement passes,
/// stopping early at a fixed point.
///
/// If a pass empties a cluster or the current assignment has a cluster with
/// no outgoing mass, the run restarts from a spectral assignment with a
/// derived seed, at most [`MAX_RESTARTS`] times; after that the last
/// assignment is returned with its flags.
pub fn cluster_pipeline(
    counts: &CountMatrix,
    path_length: usize,
    m: usize,
    iterations: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    cluster_pipeline_with(counts, path_length, m, iterations, &KMeansConfig::default(), seed)
}

pub fn cluster_pipeline_with(
    counts: &CountMatrix,
    path_length: usize,
    m: usize,
    iterations: usize,
    cfg: &KMeansConfig,
    seed: u64,
) -> Result<ClusterAssignment> {
    let mut attempt_seed = seed;
    let mut last = None;
    for attempt in 0..=MAX_RESTARTS {
        let mut current = spectral_cluster(counts, m, cfg, attempt_seed)?;
        let mut failed = false;
        for _ in 0..iterations {
            if !current.flags.empty_clusters.is_empty() {
                failed = true;
                break;
            }
            let next = match improve(counts, path_length, &current) {
                Ok(next) => next,
                Err(BmcError::ZeroMassCluster(_)) | Err(BmcError::EmptyCluster(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let fixed = next.labels == current.labels;
            current = next;
            if fixed {
                break;
            }
        }
        if !failed && current.flags.empty_clusters.is_empty() {
            return Ok(current);
        }
        last = Some(current);
        attempt_seed = derive_seed(seed, attempt as u64 + 1);
    }
    Ok(last.expect("at least one attempt"))
}

/// Estimates `alpha`, `pi_hat` and `p_hat` for a given assignment.
pub fn estimate_params(counts: &CountMatrix, path_length: usize, assignment: &ClusterAssignment) -> Result<EstimatedBmcParams> {
    if counts.n() != assignment.n() {
        return Err(BmcError::DimensionMismatch { expected: counts.n(), found: assignment.n() });
    }
    let m = assignment.m();
    let sizes = assignment.sizes();
    if let Some(k) = sizes.iter().position(|&s| s == 0) {
        return Err(BmcError::EmptyCluster(k));
    }
    let blocks = counts.block_counts(assignment.labels(), m);
    let n = assignment.n() as f64;
    let mut pi_hat = Vec::with_capacity(m);
    let mut p_hat = Vec::with_capacity(m);
    for (a, row) in blocks.iter().enumerate() {
        let mass: u64 = row.iter().sum();
        if mass == 0 {
            return Err(BmcError::ZeroMassCluster(a));
        }
        pi_hat.push(mass as f64 / path_length as f64);
        p_hat.push(row.iter().map(|&c| c as f64 / mass as f64).collect());
    }
    Ok(EstimatedBmcParams { alpha: sizes.iter().map(|&s| s as f64 / n).collect(), pi_hat, p_hat })
}

fn confusion(truth: &ClusterAssignment, estimate: &ClusterAssignment) -> Result<Vec<Vec<usize>>> {
    if truth.n() != estimate.n() {
        return Err(BmcError::DimensionMismatch { expected: truth.n(), found: estimate.n() });
    }
    if truth.m() != estimate.m() {
        return Err(BmcError::DimensionMismatch { expected: truth.m(), found: estimate.m() });
    }
    let m = truth.m();
    // c[a][b]: states labelled a by the estimate and b by the truth
    let mut c = vec![vec![0; m]; m];
    for (&t, &e) in truth.labels().iter().zip(estimate.labels()) {
        c[e][t] += 1;
    }
    Ok(c)
}

/// Fraction of states misclassified under the best relabelling of the
/// estimate. Exhaustive search over permutations for `m <= 8`, optimal
/// matching on the confusion matrix otherwise.
pub fn misclassification_ratio(truth: &ClusterAssignment, estimate: &ClusterAssignment) -> Result<f64> {
    if truth.m() <= 8 {
        misclassification_exhaustive(truth, estimate)
    } else {
        misclassification_matching(truth, estimate)
    }
}

pub fn misclassification_exhaustive(truth: &ClusterAssignment, estimate: &ClusterAssignment) -> Result<f64> {
    let c = confusion(truth, estimate)?;
    let m = c.len();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = 0;
    loop {
        best = best.max((0..m).map(|a| c[a][perm[a]]).sum::<usize>());
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok((truth.n() - best) as f64 / truth.n() as f64)
}

pub fn misclassification_matching(truth: &ClusterAssignment, estimate: &ClusterAssignment) -> Result<f64> {
    let c = confusion(truth, estimate)?;
    let cost: Vec<Vec<f64>> = c.iter().map(|row| row.iter().map(|&x| -(x as f64)).collect()).collect();
    let perm = min_cost_assignment(&cost);
    let agree: usize = perm.iter().enumerate().map(|(a, &b)| c[a][b]).sum();
    Ok((truth.n() - agree) as f64 / truth.n() as f64)
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = p.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = p.iter().rposition(|&x| x > p[i]).expect("successor exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

/// One line of a robustness table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub epsilon: f64,
    pub mean_e: f64,
    pub stderr: f64,
    pub seeds: usize,
    /// Misclassification ratio of each seed, in seed order.
    pub per_seed: Vec<f64>,
}

/// Mean and standard error (sample standard deviation over `sqrt(k)`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Misclassification ratio of the full pipeline on perturbed BMC paths.
///
/// Seed index `s` uses the nuisance kernel seeded with
/// `derive_seed(perturb.seed, s)` and the path seed `derive_seed(seed, s)` for
/// every `epsilon`, so curves over `epsilon` share randomness. `length`
/// defaults to `floor(30 n ln n)`.
pub fn robustness_experiment(
    model: &ClusterModel,
    perturb: &PerturbationSpec,
    epsilons: &[f64],
    seeds: usize,
    length: Option<usize>,
    iterations: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    let n = model.n();
    let length = length.unwrap_or_else(|| default_length(n));
    let truth = ClusterAssignment::from_model(model);
    let deltas: Vec<StateKernel> = (0..seeds)
        .into_par_iter()
        .map(|s| make_perturbation(&perturb.clone().with_seed(derive_seed(perturb.seed, s as u64)), n))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..epsilons.len()).flat_map(|e| (0..seeds).map(move |s| (e, s))).collect();
    let errors: Vec<f64> = jobs
        .par_iter()
        .map(|&(e, s)| {
            let path_seed = derive_seed(seed, s as u64);
            let path = sample_perturbed_bmc(model, &deltas[s], epsilons[e], length, Start::Equilibrium, path_seed)?;
            let counts = frequency_matrix(&path)?;
            let est = cluster_pipeline(&counts, length, model.m(), iterations, derive_seed(path_seed, 1))?;
            misclassification_ratio(&truth, &est)
        })
        .collect::<Result<_>>()?;
    Ok(epsilons
        .iter()
        .enumerate()
        .map(|(e, &epsilon)| {
            let per_seed = errors[e * seeds..(e + 1) * seeds].to_vec();
            let (mean_e, stderr) = mean_stderr(&per_seed);
            RobustnessRow { epsilon, mean_e, stderr, seeds, per_seed }
        })
        .collect())
}
