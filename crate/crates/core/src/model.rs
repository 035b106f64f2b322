//! Block Markov Chain parameterization and equilibrium computations.
//!
//! A [`ClusterModel`] partitions `n` states into `m` clusters through an
//! assignment map `sigma` and drives the cluster-level dynamics with an
//! `m x m` stochastic matrix `p`. The induced state kernel moves from `i` to
//! `j` with probability `p[sigma(i)][sigma(j)] / |V_sigma(j)|`.

use serde::{Deserialize, Serialize};

use crate::error::{BmcError, Result};
use crate::linalg;

/// Row sums within this distance of one are accepted unchanged.
pub const PROB_TOL: f64 = 1e-12;
/// Rows within this distance of one are silently renormalized.
pub const RENORM_TOL: f64 = 1e-9;

/// Checks a probability row. Rows within [`PROB_TOL`] of one are kept as
/// they are, so reconstructing a model never perturbs its entries; rows
/// within [`RENORM_TOL`] are renormalized.
pub(crate) fn normalize_row(row: &mut [f64], index: usize) -> Result<()> {
    if let Some(&bad) = row.iter().find(|x| !(0.0..=1.0 + RENORM_TOL).contains(*x)) {
        return Err(BmcError::InvalidModel(format!("row {index} has entry {bad} outside [0,1]")));
    }
    let sum: f64 = row.iter().sum();
    let dev = (sum - 1.0).abs();
    if dev > RENORM_TOL {
        return Err(BmcError::NotStochastic { row: index, sum });
    }
    if dev > PROB_TOL {
        row.iter_mut().for_each(|x| *x = (*x / sum).min(1.0));
    }
    Ok(())
}

/// A probability vector over a finite index set. Serialized as a JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(BmcError::InvalidModel("empty distribution".into()));
        }
        normalize_row(&mut values, 0)?;
        Ok(Self(values))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    /// Normalizes nonnegative weights. Fails when all weights are zero.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(BmcError::InvalidParameter("weights must be nonnegative with positive sum".into()));
        }
        Ok(Self(weights.iter().map(|w| w / total).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = BmcError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.0
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A dense `n x n` transition matrix stored row-major.
///
/// Rows sum to one, except for kernels built with
/// [`StateKernel::with_zero_rows`], where unvisited rows may be all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StateKernel {
    n: usize,
    rows: Vec<f64>,
}

impl StateKernel {
    pub fn new(n: usize, mut rows: Vec<f64>) -> Result<Self> {
        Self::check_shape(n, &rows)?;
        for i in 0..n {
            normalize_row(&mut rows[i * n..(i + 1) * n], i)?;
        }
        Ok(Self { n, rows })
    }

    /// Like [`StateKernel::new`] but accepts rows that are entirely zero.
    pub fn with_zero_rows(n: usize, mut rows: Vec<f64>) -> Result<Self> {
        Self::check_shape(n, &rows)?;
        for i in 0..n {
            let row = &mut rows[i * n..(i + 1) * n];
            if row.iter().all(|x| *x == 0.0) {
                continue;
            }
            normalize_row(row, i)?;
        }
        Ok(Self { n, rows })
    }

    fn check_shape(n: usize, rows: &[f64]) -> Result<()> {
        if n == 0 {
            return Err(BmcError::InvalidModel("kernel needs at least one state".into()));
        }
        if rows.len() != n * n {
            return Err(BmcError::DimensionMismatch { expected: n * n, found: rows.len() });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rows
    }

    pub fn has_zero_rows(&self) -> bool {
        (0..self.n).any(|i| self.row(i).iter().all(|x| *x == 0.0))
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.rows)
    }

    /// `(1 - eps) * self + eps * other`.
    pub fn mix(&self, other: &StateKernel, eps: f64) -> Result<StateKernel> {
        if other.n != self.n {
            return Err(BmcError::DimensionMismatch { expected: self.n, found: other.n });
        }
        let rows = self.rows.iter().zip(&other.rows).map(|(a, b)| (1.0 - eps) * a + eps * b).collect();
        Ok(StateKernel { n: self.n, rows })
    }

    /// Stationary distribution; fails on reducible or periodic kernels.
    pub fn stationary(&self) -> Result<Distribution> {
        Ok(Distribution(linalg::stationary(self.n, &self.rows)?))
    }
}

#[derive(Serialize, Deserialize)]
struct RawClusterModel {
    m: usize,
    sigma: Vec<usize>,
    p: Vec<Vec<f64>>,
}

/// Block Markov Chain parameters: `m` clusters, assignment `sigma`, cluster
/// transition matrix `p`.
///
/// JSON form: `{"m": .., "sigma": [..], "p": [[..], ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClusterModel", into = "RawClusterModel")]
pub struct ClusterModel {
    m: usize,
    sigma: Vec<usize>,
    p: Vec<Vec<f64>>,
    sizes: Vec<usize>,
}

impl TryFrom<RawClusterModel> for ClusterModel {
    type Error = BmcError;
    fn try_from(raw: RawClusterModel) -> Result<Self> {
        ClusterModel::new(raw.m, raw.sigma, raw.p)
    }
}

impl From<ClusterModel> for RawClusterModel {
    fn from(c: ClusterModel) -> Self {
        RawClusterModel { m: c.m, sigma: c.sigma, p: c.p }
    }
}

impl ClusterModel {
    pub fn new(m: usize, sigma: Vec<usize>, mut p: Vec<Vec<f64>>) -> Result<Self> {
        if m == 0 {
            return Err(BmcError::InvalidModel("m must be positive".into()));
        }
        if p.len() != m {
            return Err(BmcError::DimensionMismatch { expected: m, found: p.len() });
        }
        for (a, row) in p.iter_mut().enumerate() {
            if row.len() != m {
                return Err(BmcError::DimensionMismatch { expected: m, found: row.len() });
            }
            normalize_row(row, a)?;
        }
        let mut sizes = vec![0usize; m];
        for (state, &k) in sigma.iter().enumerate() {
            if k >= m {
                return Err(BmcError::InvalidModel(format!("state {state} assigned to cluster {k} >= m")));
            }
            sizes[k] += 1;
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(BmcError::EmptyCluster(k));
        }
        Ok(Self { m, sigma, p, sizes })
    }

    /// Contiguous clusters of near-equal size (the first `n mod m` clusters
    /// get one extra state).
    pub fn balanced(n: usize, p: Vec<Vec<f64>>) -> Result<Self> {
        let m = p.len();
        if m == 0 || n < m {
            return Err(BmcError::InvalidParameter(format!("cannot split {n} states into {m} clusters")));
        }
        Self::new(m, balanced_sigma(n, m), p)
    }

    /// Contiguous clusters with the given sizes.
    pub fn with_sizes(sizes: &[usize], p: Vec<Vec<f64>>) -> Result<Self> {
        let sigma = sizes.iter().enumerate().flat_map(|(k, &s)| std::iter::repeat_n(k, s)).collect();
        Self::new(sizes.len(), sigma, p)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    pub fn p(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Cluster fractions `|V_k| / n`.
    pub fn alpha(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.sizes.iter().map(|&s| s as f64 / n).collect()
    }

    /// States of each cluster in increasing id order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.m];
        for (state, &k) in self.sigma.iter().enumerate() {
            out[k].push(state);
        }
        out
    }

    /// Transition probability between two states.
    pub fn transition(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.sigma[i], self.sigma[j]);
        self.p[a][b] / self.sizes[b] as f64
    }
}

pub(crate) fn balanced_sigma(n: usize, m: usize) -> Vec<usize> {
    let (base, extra) = (n / m, n % m);
    (0..m).flat_map(|k| std::iter::repeat_n(k, base + usize::from(k < extra))).collect()
}

/// The `n x n` state kernel `P_ij = p[σ(i)][σ(j)] / |V_σ(j)|`.
pub fn state_kernel_of(model: &ClusterModel) -> StateKernel {
    let n = model.n();
    let mut rows = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            rows[i * n + j] = model.transition(i, j);
        }
    }
    StateKernel { n, rows }
}

/// Equilibrium of the cluster chain; fails with `NonErgodic` on reducible or
/// periodic `p`.
pub fn cluster_equilibrium(p: &[Vec<f64>]) -> Result<Distribution> {
    let m = p.len();
    let flat: Vec<f64> = p.iter().flatten().copied().collect();
    if flat.len() != m * m {
        return Err(BmcError::DimensionMismatch { expected: m * m, found: flat.len() });
    }
    Ok(Distribution(linalg::stationary(m, &flat)?))
}

/// State equilibrium `Π_j = π_σ(j) / |V_σ(j)|`.
pub fn state_equilibrium(model: &ClusterModel) -> Result<Distribution> {
    let pi = cluster_equilibrium(model.p())?;
    Ok(Distribution(
        model.sigma.iter().map(|&k| pi[k] / model.sizes[k] as f64).collect(),
    ))
}

/// Ordering key for [`relabel_clusters`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelKey {
    Size,
    Equilibrium,
}

/// Renumbers clusters in decreasing key order (ties: lower original id first).
pub fn relabel_clusters(model: &ClusterModel, key: RelabelKey) -> Result<ClusterModel> {
    let weights: Vec<f64> = match key {
        RelabelKey::Size => model.sizes.iter().map(|&s| s as f64).collect(),
        RelabelKey::Equilibrium => cluster_equilibrium(model.p())?.0,
    };
    let mut order: Vec<usize> = (0..model.m).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    // order[new] = old
    let mut new_of_old = vec![0; model.m];
    for (new, &old) in order.iter().enumerate() {
        new_of_old[old] = new;
    }
    let sigma = model.sigma.iter().map(|&k| new_of_old[k]).collect();
    let p = order.iter().map(|&a| order.iter().map(|&b| model.p[a][b]).collect()).collect();
    ClusterModel::new(model.m, sigma, p)
}
