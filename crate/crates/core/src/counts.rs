//! Transition counts along a path and derived matrices.

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;

use crate::error::{BmcError, Result};
use crate::linalg::LinearOperator;
use crate::simulate::SamplePath;

/// Sparse matrix of transition counts, stored as `(i, j, count)` triplets
/// sorted by row then column. Zero counts are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    n: usize,
    entries: Vec<(usize, usize, u64)>,
    trimmed: Option<BTreeSet<usize>>,
}

/// Above this many cells counting goes through a hash map instead of a dense
/// table.
const DENSE_COUNT_LIMIT: usize = 1 << 22;

impl CountMatrix {
    /// Builds a matrix from triplets; duplicates are summed and zeros dropped.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, u64)>) -> Result<Self> {
        let mut map: HashMap<(usize, usize), u64> = HashMap::new();
        for (i, j, c) in triplets {
            if i >= n || j >= n {
                return Err(BmcError::InvalidParameter(format!("entry ({i},{j}) outside {n}x{n}")));
            }
            *map.entry((i, j)).or_default() += c;
        }
        let mut entries: Vec<_> = map.into_iter().filter(|&(_, c)| c > 0).map(|((i, j), c)| (i, j, c)).collect();
        entries.sort_unstable();
        Ok(Self { n, entries, trimmed: None })
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, entries: Vec::new(), trimmed: None }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sorted nonzero triplets.
    pub fn entries(&self) -> &[(usize, usize, u64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.entries
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&(i, j)))
            .map(|k| self.entries[k].2)
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        let mut out = vec![0; self.n];
        self.entries.iter().for_each(|&(i, _, c)| out[i] += c);
        out
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut out = vec![0; self.n];
        self.entries.iter().for_each(|&(_, j, c)| out[j] += c);
        out
    }

    /// In-count plus out-count of every state.
    pub fn degrees(&self) -> Vec<u64> {
        let mut out = self.row_sums();
        self.entries.iter().for_each(|&(_, j, c)| out[j] += c);
        out
    }

    /// States zeroed by [`trim`], if any.
    pub fn trimmed(&self) -> Option<&BTreeSet<usize>> {
        self.trimmed.as_ref()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        self.entries.iter().for_each(|&(i, j, c)| m[(i, j)] = c as f64);
        m
    }

    /// Counts between clusters: `out[a][b] = N(V_a, V_b)`.
    pub fn block_counts(&self, labels: &[usize], m: usize) -> Vec<Vec<u64>> {
        let mut out = vec![vec![0; m]; m];
        self.entries.iter().for_each(|&(i, j, c)| out[labels[i]][labels[j]] += c);
        out
    }
}

impl LinearOperator for CountMatrix {
    fn nrows(&self) -> usize {
        self.n
    }

    fn ncols(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for &(i, j, c) in &self.entries {
            for k in 0..x.ncols() {
                y[(i, k)] += c as f64 * x[(j, k)];
            }
        }
        y
    }

    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for &(i, j, c) in &self.entries {
            for k in 0..x.ncols() {
                y[(j, k)] += c as f64 * x[(i, k)];
            }
        }
        y
    }
}

/// `N_ij = #{t : X_t = i, X_{t+1} = j}`.
pub fn frequency_matrix(path: &SamplePath) -> Result<CountMatrix> {
    if path.len() < 2 {
        return Err(BmcError::PathTooShort { len: path.len(), min: 2 });
    }
    let n = path.n();
    let x = path.symbols();
    let entries = if n.saturating_mul(n) <= DENSE_COUNT_LIMIT {
        let mut table = vec![0u64; n * n];
        x.windows(2).for_each(|w| table[w[0] * n + w[1]] += 1);
        table
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, &c)| (k / n, k % n, c))
            .collect()
    } else {
        let mut map: HashMap<(usize, usize), u64> = HashMap::new();
        x.windows(2).for_each(|w| *map.entry((w[0], w[1])).or_default() += 1);
        let mut entries: Vec<_> = map.into_iter().map(|((i, j), c)| (i, j, c)).collect();
        entries.sort_unstable();
        entries
    };
    Ok(CountMatrix { n, entries, trimmed: None })
}

/// Zeros the rows and columns of the `gamma` states with the largest
/// degree (in-count plus out-count); ties go to the lower state id.
pub fn trim(counts: &CountMatrix, gamma: usize) -> Result<CountMatrix> {
    if gamma > counts.n {
        return Err(BmcError::InvalidParameter(format!("cannot trim {gamma} of {} states", counts.n)));
    }
    let degree = counts.degrees();
    let mut order: Vec<usize> = (0..counts.n).collect();
    order.sort_by(|&a, &b| degree[b].cmp(&degree[a]).then(a.cmp(&b)));
    let gone: BTreeSet<usize> = order[..gamma].iter().copied().collect();
    let entries = counts
        .entries
        .iter()
        .copied()
        .filter(|(i, j, _)| !gone.contains(i) && !gone.contains(j))
        .collect();
    let mut all = counts.trimmed.clone().unwrap_or_default();
    all.extend(gone);
    Ok(CountMatrix { n: counts.n, entries, trimmed: Some(all) })
}

/// `L_ij = N_ij / sqrt(rowsum_i * colsum_j)`, zero where `N_ij = 0`.
pub fn laplacian(counts: &CountMatrix) -> DMatrix<f64> {
    let rows = counts.row_sums();
    let cols = counts.col_sums();
    let mut l = DMatrix::zeros(counts.n, counts.n);
    for &(i, j, c) in &counts.entries {
        l[(i, j)] = c as f64 / ((rows[i] as f64) * (cols[j] as f64)).sqrt();
    }
    l
}

/// Collapses every run of a repeated symbol to a single occurrence.
pub fn remove_self_jumps(path: &SamplePath) -> SamplePath {
    let mut symbols = path.symbols().to_vec();
    symbols.dedup();
    SamplePath::from_parts(path.n(), symbols, path.vocabulary().cloned())
}

/// Entrywise sum, optionally with the diagonal cleared.
pub fn sum_counts(list: &[CountMatrix], zero_diagonal: bool) -> Result<CountMatrix> {
    let first = list.first().ok_or_else(|| BmcError::InvalidParameter("no count matrices to sum".into()))?;
    let n = first.n;
    if let Some(bad) = list.iter().find(|c| c.n != n) {
        return Err(BmcError::DimensionMismatch { expected: n, found: bad.n });
    }
    CountMatrix::from_triplets(
        n,
        list.iter()
            .flat_map(|c| c.entries.iter().copied())
            .filter(|&(i, j, _)| !(zero_diagonal && i == j)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize, s: &[usize]) -> SamplePath {
        SamplePath::new(n, s.to_vec()).unwrap()
    }

    #[test]
    fn hand_count() {
        let c = frequency_matrix(&path(2, &[0, 1, 0, 0])).unwrap();
        assert_eq!((c.get(0, 1), c.get(1, 0), c.get(0, 0), c.get(1, 1)), (1, 1, 1, 0));
        assert_eq!(c.total(), 3);
        let c = frequency_matrix(&path(3, &[2; 6])).unwrap();
        assert_eq!(c.entries(), &[(2, 2, 5)]);
        assert!(matches!(frequency_matrix(&path(2, &[0])), Err(BmcError::PathTooShort { .. })));
    }

    #[test]
    fn trimming() {
        let c = CountMatrix::from_triplets(3, [(0, 0, 2), (0, 1, 1), (1, 2, 1)]).unwrap();
        // degrees: state 0 -> 2+2+1 = 5, state 1 -> 1+1 = 2, state 2 -> 1
        assert_eq!(c.degrees(), vec![5, 2, 1]);
        let t = trim(&c, 1).unwrap();
        assert_eq!(t.entries(), &[(1, 2, 1)]);
        assert_eq!(t.trimmed().unwrap().iter().copied().collect::<Vec<_>>(), vec![0]);
        assert_eq!(trim(&c, 0).unwrap().entries(), c.entries());
        assert_eq!(trim(&c, 3).unwrap().total(), 0);
        // ties go to the lower id
        let tie = CountMatrix::from_triplets(2, [(0, 1, 1), (1, 0, 1)]).unwrap();
        assert_eq!(trim(&tie, 1).unwrap().trimmed().unwrap().first(), Some(&0));
    }

    #[test]
    fn laplacian_examples() {
        let c = CountMatrix::from_triplets(2, [(0, 0, 2)]).unwrap();
        let l = laplacian(&c);
        assert_eq!(l[(0, 0)], 1.0);
        assert_eq!(l[(0, 1)] + l[(1, 0)] + l[(1, 1)], 0.0);
        let ones = CountMatrix::from_triplets(3, (0..9).map(|k| (k / 3, k % 3, 1))).unwrap();
        assert!(laplacian(&ones).iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let sym = CountMatrix::from_triplets(3, [(0, 1, 2), (1, 0, 2), (1, 2, 5), (2, 1, 5)]).unwrap();
        let l = laplacian(&sym);
        assert!((l.clone() - l.transpose()).amax() < 1e-15);
    }

    #[test]
    fn self_jumps() {
        assert_eq!(remove_self_jumps(&path(1, &[0, 0, 0])).symbols(), &[0]);
        assert_eq!(remove_self_jumps(&path(2, &[0, 1, 1, 0])).symbols(), &[0, 1, 0]);
        let p = path(3, &[0, 1, 2, 1]);
        assert_eq!(remove_self_jumps(&p), p);
    }

    #[test]
    fn summing() {
        let c = CountMatrix::from_triplets(2, [(0, 0, 2), (0, 1, 3)]).unwrap();
        assert_eq!(sum_counts(std::slice::from_ref(&c), false).unwrap(), c);
        let twice = sum_counts(&[c.clone(), c.clone()], false).unwrap();
        assert_eq!(twice.entries(), &[(0, 0, 4), (0, 1, 6)]);
        let nodiag = sum_counts(&[c.clone(), c], true).unwrap();
        assert_eq!(nodiag.get(0, 0), 0);
        assert!(matches!(
            sum_counts(&[CountMatrix::zeros(2), CountMatrix::zeros(3)], false),
            Err(BmcError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sparse_operator_matches_dense() {
        let c = CountMatrix::from_triplets(3, [(0, 1, 2), (2, 0, 7), (1, 1, 1)]).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.apply(&x), c.to_dense() * &x);
        assert_eq!(c.apply_transpose(&x), c.to_dense().transpose() * &x);
    }

    #[test]
    fn hashed_counting_agrees_with_dense() {
        let n = 3000; // n^2 above the dense limit
        let symbols: Vec<usize> = (0..20_000).map(|t| (t * 7919 + t / 3) % n).collect();
        let c = frequency_matrix(&SamplePath::new(n, symbols.clone()).unwrap()).unwrap();
        let small: Vec<usize> = symbols.iter().map(|s| s % 50).collect();
        let reference = CountMatrix::from_triplets(
            n,
            symbols.windows(2).map(|w| (w[0], w[1], 1)),
        )
        .unwrap();
        assert_eq!(c, reference);
        assert_eq!(frequency_matrix(&SamplePath::new(50, small).unwrap()).unwrap().total(), 19_999);
    }
}
