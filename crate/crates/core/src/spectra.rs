//! Singular-value statistics of trajectory matrices and their limiting
//! densities.
//!
//! The limiting law of a matrix whose entries have block-constant variance
//! `S_kl / n` (blocks of relative sizes `alpha`) is obtained from the
//! Stieltjes transform `s(z) = sum_i alpha_i (a_i + a_{m+i}) / 2`, where the
//! `2m` functions `a` solve
//!
//! ```text
//! 1 / a_i     = z - sum_j alpha_j S_ij a_{m+j}
//! 1 / a_{m+i} = z - sum_j alpha_j S_ji a_j
//! ```
//!
//! The density of singular values is `f(x) = -(2/π) Im s(x + iη)` for
//! `x > 0`, the factor two undoing the symmetrization.

use nalgebra::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::counts::{frequency_matrix, laplacian};
use crate::error::{BmcError, Result};
use crate::model::{cluster_equilibrium, ClusterModel};
use crate::simulate::SamplePath;

pub use crate::linalg::singular_values;

type C64 = Complex<f64>;

/// Damping applied to every fixed-point update.
pub const DAMPING: f64 = 0.5;
/// Successive iterates closer than this (max norm) count as converged.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Iteration budget per grid point.
pub const FIXED_POINT_BUDGET: usize = 100_000;
/// Below this `l / n^2` an empirical matrix is outside the dense regime the
/// limiting law describes.
pub const DENSE_REGIME_LAMBDA: f64 = 0.1;

/// Limiting `n * variance` per block pair together with block fractions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockVarianceProfile {
    m: usize,
    s: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

impl BlockVarianceProfile {
    pub fn new(s: Vec<Vec<f64>>, alpha: Vec<f64>) -> Result<Self> {
        let m = alpha.len();
        if m == 0 || s.len() != m || s.iter().any(|r| r.len() != m) {
            return Err(BmcError::DimensionMismatch { expected: m, found: s.len() });
        }
        if s.iter().flatten().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(BmcError::InvalidParameter("variance profile must be finite and nonnegative".into()));
        }
        if alpha.iter().any(|a| !(*a > 0.0)) || (alpha.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(BmcError::InvalidParameter("alpha must be positive and sum to one".into()));
        }
        Ok(Self { m, s, alpha })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn s(&self) -> &[Vec<f64>] {
        &self.s
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Right end of the support estimated from the largest weighted row and
    /// column sums, times a safety margin.
    pub fn support_edge(&self, margin: f64) -> f64 {
        let row = (0..self.m).map(|k| (0..self.m).map(|l| self.alpha[l] * self.s[k][l]).sum::<f64>()).fold(0.0, f64::max);
        let col = (0..self.m).map(|l| (0..self.m).map(|k| self.alpha[k] * self.s[k][l]).sum::<f64>()).fold(0.0, f64::max);
        (row.sqrt() + col.sqrt()) * margin
    }
}

/// A density on `[0, ∞)`: either a histogram (with bin edges) or a curve
/// sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralDensity {
    /// Bin centers for histograms, abscissae for curves.
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// Imaginary offset used by the solver; zero for histograms.
    pub eta: f64,
    /// Bin edges (`grid.len() + 1` of them) for histograms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
}

impl SpectralDensity {
    /// Trapezoid (curves) or exact (histograms) total mass.
    pub fn mass(&self) -> f64 {
        match &self.edges {
            Some(e) => self.density.iter().zip(e.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum(),
            None => trapezoid(&self.grid, &self.density),
        }
    }

    /// Normalized CDF as knots `(x, F(x))`, linear in between.
    fn cdf_knots(&self) -> Vec<(f64, f64)> {
        let mut knots = Vec::new();
        match &self.edges {
            Some(e) => {
                let mut acc = 0.0;
                knots.push((e[0], 0.0));
                for (d, w) in self.density.iter().zip(e.windows(2)) {
                    acc += d * (w[1] - w[0]);
                    knots.push((w[1], acc));
                }
            }
            None => {
                let mut acc = 0.0;
                knots.push((self.grid[0], 0.0));
                for k in 1..self.grid.len() {
                    acc += 0.5 * (self.density[k] + self.density[k - 1]) * (self.grid[k] - self.grid[k - 1]);
                    knots.push((self.grid[k], acc));
                }
            }
        }
        let total = knots.last().map_or(0.0, |k| k.1);
        if total > 0.0 {
            knots.iter_mut().for_each(|k| k.1 /= total);
        }
        knots
    }
}

fn trapezoid(x: &[f64], f: &[f64]) -> f64 {
    x.windows(2).zip(f.windows(2)).map(|(x, f)| 0.5 * (f[0] + f[1]) * (x[1] - x[0])).sum()
}

fn eval_cdf(knots: &[(f64, f64)], x: f64) -> f64 {
    let k = knots.partition_point(|p| p.0 <= x);
    if k == 0 {
        return 0.0;
    }
    if k == knots.len() {
        return knots[k - 1].1;
    }
    let (a, b) = (knots[k - 1], knots[k]);
    if b.0 == a.0 {
        b.1
    } else {
        a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
    }
}

/// How singular values are rescaled before binning, for an `n x n` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Multiply by `sqrt(n)` (normalized Laplacian).
    SqrtN,
    /// Divide by `sqrt(n)` (frequency matrix).
    InvSqrtN,
}

impl Scaling {
    fn factor(self, n: usize) -> f64 {
        match self {
            Self::SqrtN => (n as f64).sqrt(),
            Self::InvSqrtN => 1.0 / (n as f64).sqrt(),
        }
    }
}

/// Scaled singular values with the `drop_leading` largest removed.
pub fn bulk_values(values: &[f64], scaling: Scaling, drop_leading: usize) -> Result<Vec<f64>> {
    if drop_leading >= values.len() {
        return Err(BmcError::InvalidParameter(format!(
            "cannot drop {drop_leading} of {} singular values",
            values.len()
        )));
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let factor = scaling.factor(values.len());
    Ok(v[drop_leading..].iter().map(|x| x * factor).collect())
}

/// Density-normalized histogram of the bulk values on `[0, hi]`, where `hi`
/// defaults to the largest bulk value.
pub fn sv_histogram(
    values: &[f64],
    scaling: Scaling,
    bins: usize,
    drop_leading: usize,
    range: Option<(f64, f64)>,
) -> Result<SpectralDensity> {
    let bulk = bulk_values(values, scaling, drop_leading)?;
    histogram(&bulk, bins, range)
}

fn histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<SpectralDensity> {
    if bins == 0 {
        return Err(BmcError::InvalidParameter("bins must be positive".into()));
    }
    let (lo, mut hi) = range.unwrap_or((0.0, values.iter().copied().fold(0.0, f64::max)));
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = values.len() as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    Ok(SpectralDensity {
        grid: edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
        density: counts.iter().map(|&c| c as f64 / (total * width)).collect(),
        eta: 0.0,
        edges: Some(edges),
    })
}

/// Which trajectory matrix to analyse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// `N / sqrt(n)`
    Frequency,
    /// `sqrt(n) L`
    Laplacian,
}

impl MatrixKind {
    pub fn scaling(self) -> Scaling {
        match self {
            Self::Frequency => Scaling::InvSqrtN,
            Self::Laplacian => Scaling::SqrtN,
        }
    }
}

/// Singular values of the chosen matrix built from a path.
pub fn path_singular_values(path: &SamplePath, kind: MatrixKind) -> Result<Vec<f64>> {
    let counts = frequency_matrix(path)?;
    let dense = match kind {
        MatrixKind::Frequency => counts.to_dense(),
        MatrixKind::Laplacian => laplacian(&counts),
    };
    Ok(singular_values(&dense))
}

/// Averages histograms over `pieces` equal consecutive pieces of a path.
/// All pieces share bins on `[0, max bulk value over pieces]`.
pub fn piecewise_histogram(
    path: &SamplePath,
    pieces: usize,
    kind: MatrixKind,
    bins: usize,
    drop_leading: usize,
) -> Result<SpectralDensity> {
    let per = path.len() / pieces.max(1);
    if pieces == 0 || per < 2 {
        return Err(BmcError::PathTooShort { len: path.len(), min: 2 * pieces.max(1) });
    }
    let bulks = (0..pieces)
        .into_par_iter()
        .map(|k| {
            let piece = path.slice(k * per, (k + 1) * per)?;
            bulk_values(&path_singular_values(&piece, kind)?, kind.scaling(), drop_leading)
        })
        .collect::<Result<Vec<_>>>()?;
    average_histograms(&bulks, bins)
}

/// Average of histograms of several value sets on a common range.
pub fn average_histograms(sets: &[Vec<f64>], bins: usize) -> Result<SpectralDensity> {
    let hi = sets.iter().flatten().copied().fold(0.0, f64::max);
    let hists = sets.iter().map(|v| histogram(v, bins, Some((0.0, hi)))).collect::<Result<Vec<_>>>()?;
    let mut out = hists[0].clone();
    for (b, d) in out.density.iter_mut().enumerate() {
        *d = hists.iter().map(|h| h.density[b]).sum::<f64>() / hists.len() as f64;
    }
    Ok(out)
}

/// Profile of `sqrt(n) L`: `S_kl = p_kl / (λ π_l)`.
pub fn laplacian_profile(model: &ClusterModel, lambda: f64) -> Result<BlockVarianceProfile> {
    check_lambda(lambda)?;
    let pi = cluster_equilibrium(model.p())?;
    let m = model.m();
    let s = (0..m).map(|k| (0..m).map(|l| model.p()[k][l] / (lambda * pi[l])).collect()).collect();
    BlockVarianceProfile::new(s, model.alpha())
}

/// Profile of `N / sqrt(n)`: `S_kl = λ π_k p_kl / (α_k α_l)`.
pub fn frequency_profile(model: &ClusterModel, lambda: f64) -> Result<BlockVarianceProfile> {
    check_lambda(lambda)?;
    let pi = cluster_equilibrium(model.p())?;
    let alpha = model.alpha();
    let m = model.m();
    let s = (0..m)
        .map(|k| (0..m).map(|l| lambda * pi[k] * model.p()[k][l] / (alpha[k] * alpha[l])).collect())
        .collect();
    BlockVarianceProfile::new(s, alpha)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(BmcError::InvalidParameter(format!("lambda = {lambda} must be positive")));
    }
    Ok(())
}

/// `λ = l / n^2` and whether the path is long enough for the dense regime.
pub fn estimate_lambda(length: usize, n: usize) -> (f64, bool) {
    let lambda = length as f64 / (n as f64 * n as f64);
    (lambda, lambda >= DENSE_REGIME_LAMBDA)
}

fn fixed_point_map(profile: &BlockVarianceProfile, z: C64, a: &[C64]) -> Vec<C64> {
    let m = profile.m;
    let (s, alpha) = (&profile.s, &profile.alpha);
    let mut out = vec![C64::new(0.0, 0.0); 2 * m];
    for i in 0..m {
        let mut left = z;
        let mut right = z;
        for j in 0..m {
            left -= a[m + j] * (alpha[j] * s[i][j]);
            right -= a[j] * (alpha[j] * s[j][i]);
        }
        out[i] = left.inv();
        out[m + i] = right.inv();
    }
    out
}

/// `max_k |a_k - F(a)_k|` for the fixed-point map `F` at `z`.
pub fn fixed_point_residual(profile: &BlockVarianceProfile, z: C64, a: &[C64]) -> f64 {
    let f = fixed_point_map(profile, z, a);
    a.iter().zip(&f).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Solves the `2m`-dimensional system at `z` (upper half-plane) by damped
/// iteration from `a_k = 1/z`.
pub fn solve_fixed_point(profile: &BlockVarianceProfile, z: C64) -> Result<Vec<C64>> {
    let mut a = vec![z.inv(); 2 * profile.m];
    let mut residual = f64::INFINITY;
    for _ in 0..FIXED_POINT_BUDGET {
        let f = fixed_point_map(profile, z, &a);
        residual = 0.0;
        for (ak, fk) in a.iter_mut().zip(&f) {
            let next = *ak * (1.0 - DAMPING) + fk * DAMPING;
            residual = f64::max(residual, (next - *ak).norm());
            *ak = next;
        }
        if residual < FIXED_POINT_TOL {
            return Ok(a);
        }
    }
    Err(BmcError::NoConvergence { x: z.re, residual })
}

/// `s(z) = sum_i alpha_i (a_i + a_{m+i}) / 2`.
pub fn stieltjes(profile: &BlockVarianceProfile, z: C64) -> Result<C64> {
    let a = solve_fixed_point(profile, z)?;
    let m = profile.m;
    Ok((0..m).map(|i| (a[i] + a[m + i]) * (profile.alpha[i] / 2.0)).sum())
}

/// Limiting singular-value density on `grid` (nonnegative abscissae).
pub fn limiting_density(profile: &BlockVarianceProfile, grid: &[f64], eta: f64) -> Result<SpectralDensity> {
    if !(eta > 0.0) {
        return Err(BmcError::InvalidParameter(format!("eta = {eta} must be positive")));
    }
    if grid.iter().any(|&x| x < 0.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BmcError::InvalidParameter("grid must be increasing and nonnegative".into()));
    }
    let density = grid
        .par_iter()
        .map(|&x| {
            let s = stieltjes(profile, C64::new(x, eta))?;
            Ok((-2.0 / std::f64::consts::PI * s.im).max(0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralDensity { grid: grid.to_vec(), density, eta, edges: None })
}

/// `points` midpoints of equal cells covering `[0, edge]`, with the edge from
/// [`BlockVarianceProfile::support_edge`] and a 10% margin.
pub fn default_grid(profile: &BlockVarianceProfile, points: usize) -> Vec<f64> {
    let edge = profile.support_edge(1.1);
    (0..points).map(|k| (k as f64 + 0.5) * edge / points as f64).collect()
}

/// Kolmogorov distance between two densities: the largest gap between their
/// normalized CDFs over the union of their knots.
pub fn compare_density(histogram: &SpectralDensity, theory: &SpectralDensity) -> f64 {
    let (a, b) = (histogram.cdf_knots(), theory.cdf_knots());
    a.iter()
        .chain(&b)
        .map(|&(x, _)| (eval_cdf(&a, x) - eval_cdf(&b, x)).abs())
        .fold(0.0, f64::max)
}
