//! Dense and operator-based linear algebra used across the crate.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BmcError, Result};
use crate::rng::stream_rng;

/// ℓ1 change below which power iteration stops.
pub const POWER_TOL: f64 = 1e-12;
/// Iteration budget for power iteration.
pub const POWER_BUDGET: usize = 1_000_000;

/// Checks strong connectivity and aperiodicity of the support graph of a
/// row-major `n x n` matrix.
///
/// The period is the gcd of `level(u) + 1 - level(v)` over all edges `u -> v`,
/// where `level` is the BFS depth from state 0. This equals the gcd of all
/// cycle lengths when the graph is strongly connected.
pub fn check_ergodic(n: usize, rows: &[f64]) -> Result<()> {
    assert_eq!(rows.len(), n * n);
    if n == 0 {
        return Err(BmcError::NonErgodic("empty state space".into()));
    }
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| rows[i * n + j] > 0.0).collect())
        .collect();
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, s) in succ.iter().enumerate() {
        for &j in s {
            pred[j].push(i);
        }
    }
    let forward = bfs_levels(&succ);
    if let Some(k) = forward.iter().position(Option::is_none) {
        return Err(BmcError::NonErgodic(format!("state {k} unreachable from state 0")));
    }
    if let Some(k) = bfs_levels(&pred).iter().position(Option::is_none) {
        return Err(BmcError::NonErgodic(format!("state 0 unreachable from state {k}")));
    }
    let level: Vec<i64> = forward.into_iter().map(|l| l.unwrap() as i64).collect();
    let mut period = 0i64;
    for (u, s) in succ.iter().enumerate() {
        for &v in s {
            period = gcd(period, (level[u] + 1 - level[v]).abs());
        }
    }
    if period != 1 {
        return Err(BmcError::NonErgodic(format!("chain has period {period}")));
    }
    Ok(())
}

fn bfs_levels(adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    level[0] = Some(0);
    queue.push_back(0);
    while let Some(u) = queue.pop_front() {
        let next = level[u].unwrap() + 1;
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Stationary distribution of an ergodic row-stochastic matrix by power
/// iteration from the uniform vector.
pub fn stationary(n: usize, rows: &[f64]) -> Result<Vec<f64>> {
    check_ergodic(n, rows)?;
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..POWER_BUDGET {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (i, &w) in pi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = &rows[i * n..(i + 1) * n];
            for (acc, &pij) in next.iter_mut().zip(row) {
                *acc += w * pij;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let change: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if change <= POWER_TOL {
            return Ok(pi);
        }
    }
    Err(BmcError::NonErgodic(format!(
        "power iteration did not converge within {POWER_BUDGET} iterations"
    )))
}

/// All singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Largest singular value (operator 2-norm).
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Leading singular triplets: `u` is `nrows x k`, `v` is `ncols x k`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// Something that can multiply dense blocks from either side.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A * x`
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    /// `A^T * x`
    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self * x
    }
    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.tr_mul(x)
    }
}

/// Top-`k` singular triplets from a full dense decomposition.
pub fn truncated_svd_dense(m: &DMatrix<f64>, k: usize) -> TruncatedSvd {
    let k = k.min(m.nrows()).min(m.ncols());
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let order = &order[..k];
    TruncatedSvd {
        u: DMatrix::from_fn(m.nrows(), k, |i, c| u[(i, order[c])]),
        s: order.iter().map(|&c| svd.singular_values[c]).collect(),
        v: DMatrix::from_fn(m.ncols(), k, |i, c| vt[(order[c], i)]),
    }
}

/// Top-`k` singular triplets by randomized subspace iteration with
/// oversampling 10, iterated until the leading values are stable to 1e-13
/// relative (at most 500 sweeps).
pub fn truncated_svd_iterative<A: LinearOperator>(a: &A, k: usize, seed: u64) -> TruncatedSvd {
    let (rows, cols) = (a.nrows(), a.ncols());
    let k = k.min(rows).min(cols);
    let width = (k + 10).min(rows).min(cols);
    let mut rng = stream_rng(seed, 0);
    let omega = DMatrix::from_fn(cols, width, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = orthonormalize(&a.apply(&omega));
    let mut previous: Vec<f64> = vec![f64::NAN; k];
    let mut sweeps = 0;
    loop {
        let z = orthonormalize(&a.apply_transpose(&q));
        q = orthonormalize(&a.apply(&z));
        let b_t = a.apply_transpose(&q); // cols x width, equals (Q^T A)^T
        let small = truncated_svd_dense(&b_t.transpose(), k);
        let stable = small
            .s
            .iter()
            .zip(&previous)
            .all(|(s, p)| (s - p).abs() <= 1e-13 * small.s[0].max(f64::MIN_POSITIVE));
        sweeps += 1;
        if stable || sweeps >= 500 {
            return TruncatedSvd { u: &q * small.u, s: small.s, v: small.v };
        }
        previous = small.s;
    }
}

fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}
