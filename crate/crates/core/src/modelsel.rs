//! Likelihoods, divergence-rate comparison, order selection and kernel
//! estimation.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::{cluster_pipeline, ClusterAssignment};
use crate::counts::{frequency_matrix, CountMatrix};
use crate::error::{BmcError, Result};
use crate::linalg::operator_norm;
use crate::model::{normalize_row, state_kernel_of, ClusterModel, StateKernel};
use crate::rng::derive_seed;
use crate::simulate::{
    make_perturbation, normalize_rows_or_uniform, sample_mixture, sample_perturbed_bmc, PerturbationKind,
    PerturbationSpec, SamplePath, Start, ZipfTable,
};

/// An `r`th-order chain on `m` symbols. Rows are indexed by windows of the
/// last `r` symbols, encoded in base `m` with the oldest symbol most
/// significant. Rows never stored are all zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderModel {
    m: usize,
    r: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl OrderModel {
    pub fn from_rows(m: usize, r: usize, rows: BTreeMap<usize, Vec<f64>>) -> Result<Self> {
        if m == 0 {
            return Err(BmcError::InvalidModel("m must be positive".into()));
        }
        let windows = (m as f64).powi(r as i32);
        if windows > usize::MAX as f64 / 2.0 {
            return Err(BmcError::InvalidParameter(format!("{m}^{r} windows do not fit in memory indices")));
        }
        let mut checked = BTreeMap::new();
        for (key, mut row) in rows {
            if key as f64 >= windows {
                return Err(BmcError::InvalidModel(format!("window index {key} out of range")));
            }
            if row.len() != m {
                return Err(BmcError::DimensionMismatch { expected: m, found: row.len() });
            }
            if row.iter().all(|&x| x == 0.0) {
                continue;
            }
            normalize_row(&mut row, key)?;
            checked.insert(key, row);
        }
        Ok(Self { m, r, rows: checked })
    }

    /// The first-order model with the rows of `kernel`.
    pub fn from_kernel(kernel: &StateKernel) -> Self {
        let rows = (0..kernel.n())
            .filter(|&i| kernel.row(i).iter().any(|&x| x > 0.0))
            .map(|i| (i, kernel.row(i).to_vec()))
            .collect();
        Self { m: kernel.n(), r: 1, rows }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn window_index(&self, window: &[usize]) -> usize {
        window.iter().fold(0, |acc, &s| acc * self.m + s)
    }

    /// Row for a window index; zeros when the window has no row.
    pub fn row(&self, key: usize) -> Vec<f64> {
        self.rows.get(&key).cloned().unwrap_or_else(|| vec![0.0; self.m])
    }

    pub fn prob(&self, key: usize, next: usize) -> f64 {
        self.rows.get(&key).map_or(0.0, |row| row[next])
    }

    /// Stored (nonzero) rows.
    pub fn rows(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.rows
    }
}

/// `sum_t ln(p[σ(X_t)][σ(X_t+1)] / |V_σ(X_t+1)|)`; `-inf` if any step has
/// zero probability.
pub fn bmc_loglik(path: &SamplePath, model: &ClusterModel) -> Result<f64> {
    if path.len() < 2 {
        return Err(BmcError::PathTooShort { len: path.len(), min: 2 });
    }
    if path.n() != model.n() {
        return Err(BmcError::DimensionMismatch { expected: model.n(), found: path.n() });
    }
    Ok(path.symbols().windows(2).map(|w| model.transition(w[0], w[1]).ln()).sum())
}

/// Per-step log-likelihood ratio `(1/l) sum_t ln(P_{x_t x_t+1} / Q_{x_t x_t+1})`.
/// Positive values favor `P`. Each term is `ln P - ln Q`, so swapping the
/// kernels negates the result exactly.
pub fn kl_rate_diff(path: &SamplePath, p: &StateKernel, q: &StateKernel) -> Result<f64> {
    if path.len() < 2 {
        return Err(BmcError::PathTooShort { len: path.len(), min: 2 });
    }
    for k in [p, q] {
        if k.n() != path.n() {
            return Err(BmcError::DimensionMismatch { expected: path.n(), found: k.n() });
        }
    }
    let mut total = 0.0;
    for (t, w) in path.symbols().windows(2).enumerate() {
        let (a, b) = (p.get(w[0], w[1]), q.get(w[0], w[1]));
        if a == 0.0 || b == 0.0 {
            return Err(BmcError::ZeroProbabilityTransition { t, i: w[0], j: w[1] });
        }
        total += a.ln() - b.ln();
    }
    Ok(total / path.len() as f64)
}

/// `max |ln(P_ij / Q_ij)|` over entries where both are positive. Fails if the
/// supports differ.
pub fn max_log_ratio(p: &StateKernel, q: &StateKernel) -> Result<f64> {
    if p.n() != q.n() {
        return Err(BmcError::DimensionMismatch { expected: p.n(), found: q.n() });
    }
    let n = p.n();
    let mut delta: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (p.get(i, j), q.get(i, j));
            match (a > 0.0, b > 0.0) {
                (true, true) => delta = delta.max((a / b).ln().abs()),
                (false, false) => {}
                _ => return Err(BmcError::SupportMismatch { i, j }),
            }
        }
    }
    Ok(delta)
}

/// Closed-form confidence half-width
/// `c_z = (1/l) * delta * sqrt(18 (tau_mix + 1) ln(2/z))`.
pub fn confidence_halfwidth(delta: f64, length: usize, tau_mix: usize, z: f64) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(BmcError::InvalidZ(z));
    }
    if length == 0 {
        return Err(BmcError::PathTooShort { len: 0, min: 1 });
    }
    Ok(delta / length as f64 * (18.0 * (tau_mix as f64 + 1.0) * (2.0 / z).ln()).sqrt())
}

pub fn kl_confidence_halfwidth(p: &StateKernel, q: &StateKernel, length: usize, tau_mix: usize, z: f64) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(BmcError::InvalidZ(z));
    }
    confidence_halfwidth(max_log_ratio(p, q)?, length, tau_mix, z)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlReport {
    pub d_hat: f64,
    pub ci_halfwidth: f64,
    pub z: f64,
    pub delta: f64,
    pub tau_mix: usize,
    pub decision: KlDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDecision {
    PBetter,
    QBetter,
    Inconclusive,
}

impl std::fmt::Display for KlDecision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PBetter => "P better",
            Self::QBetter => "Q better",
            Self::Inconclusive => "inconclusive",
        })
    }
}

pub fn kl_report(path: &SamplePath, p: &StateKernel, q: &StateKernel, tau_mix: usize, z: f64) -> Result<KlReport> {
    let delta = max_log_ratio(p, q)?;
    let ci_halfwidth = confidence_halfwidth(delta, path.len(), tau_mix, z)?;
    let d_hat = kl_rate_diff(path, p, q)?;
    let decision = if d_hat.abs() <= ci_halfwidth {
        KlDecision::Inconclusive
    } else if d_hat > 0.0 {
        KlDecision::PBetter
    } else {
        KlDecision::QBetter
    };
    Ok(KlReport { d_hat, ci_halfwidth, z, delta, tau_mix, decision })
}

/// Largest number of steps examined by [`mixing_time`].
pub const MIXING_BUDGET: usize = 10_000;

/// Smallest `t >= 1` with `max_{i,j} TV(P^t(i,.), P^t(j,.)) <= 1/2`.
pub fn mixing_time(kernel: &StateKernel) -> Result<usize> {
    let p = kernel.to_matrix();
    let n = kernel.n();
    let mut power = p.clone();
    for t in 1..=MIXING_BUDGET {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let tv: f64 = 0.5 * (0..n).map(|k| (power[(i, k)] - power[(j, k)]).abs()).sum::<f64>();
                worst = worst.max(tv);
            }
        }
        if worst <= 0.5 {
            return Ok(t);
        }
        power = &power * &p;
    }
    Err(BmcError::NonErgodic(format!("TV distance above 1/2 after {MIXING_BUDGET} steps")))
}

/// First `floor(l/2)` symbols for training, the rest for validation.
pub fn holdout_split(path: &SamplePath) -> Result<(SamplePath, SamplePath)> {
    if path.len() < 4 {
        return Err(BmcError::PathTooShort { len: path.len(), min: 4 });
    }
    let half = path.len() / 2;
    Ok((path.slice(0, half)?, path.slice(half, path.len())?))
}

/// Next-symbol positions `u` (0-based) scored by an order-`r` model:
/// `r <= u <= l - r - 1`, with window `y[u-r..u]`.
fn window_positions(len: usize, r: usize) -> std::ops::Range<usize> {
    r..len.saturating_sub(r).max(r)
}

/// Maximum-likelihood order-`r` model over the same windows as
/// [`order_loglik`]; unseen windows get zero rows.
pub fn mle_order_model(cluster_path: &SamplePath, r: usize) -> Result<OrderModel> {
    let y = cluster_path.symbols();
    if y.len() <= r {
        return Err(BmcError::PathTooShort { len: y.len(), min: r + 1 });
    }
    let m = cluster_path.n();
    let mut counts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for u in window_positions(y.len(), r) {
        let key = y[u - r..u].iter().fold(0, |acc, &s| acc * m + s);
        counts.entry(key).or_insert_with(|| vec![0.0; m])[y[u]] += 1.0;
    }
    for row in counts.values_mut() {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    OrderModel::from_rows(m, r, counts)
}

/// `sum_u ln Q[y[u-r..u], y[u]]` over `r <= u <= l - r - 1`.
pub fn order_loglik(cluster_path: &SamplePath, model: &OrderModel) -> Result<f64> {
    if cluster_path.n() != model.m() {
        return Err(BmcError::DimensionMismatch { expected: model.m(), found: cluster_path.n() });
    }
    let y = cluster_path.symbols();
    let r = model.r();
    Ok(window_positions(y.len(), r).map(|u| model.prob(model.window_index(&y[u - r..u]), y[u]).ln()).sum())
}

/// Free parameters `m^r (m - 1)` of an order-`r` chain.
pub fn degrees_of_freedom(m: usize, r: usize) -> f64 {
    (m as f64).powi(r as i32) * (m as f64 - 1.0)
}

/// `-2 loglik + 2 DF(m,r) (1 + ln(l - r))`.
pub fn caic(cluster_path: &SamplePath, model: &OrderModel) -> Result<f64> {
    let len = cluster_path.len();
    if len <= model.r() {
        return Err(BmcError::PathTooShort { len, min: model.r() + 1 });
    }
    let loglik = order_loglik(cluster_path, model)?;
    Ok(-2.0 * loglik + 2.0 * degrees_of_freedom(model.m(), model.r()) * (1.0 + ((len - model.r()) as f64).ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderSelection {
    pub r: usize,
    /// `(r, CAIC)` for every candidate order.
    pub table: Vec<(usize, f64)>,
}

/// Order in `0..=r_max` minimizing the CAIC of the fitted model; ties go to
/// the smaller order.
pub fn select_order(cluster_path: &SamplePath, r_max: usize) -> Result<OrderSelection> {
    if cluster_path.len() <= r_max {
        return Err(BmcError::PathTooShort { len: cluster_path.len(), min: r_max + 1 });
    }
    let table = (0..=r_max)
        .map(|r| Ok((r, caic(cluster_path, &mle_order_model(cluster_path, r)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let r = table.iter().fold((0, f64::INFINITY), |best, &(r, c)| if c < best.1 { (r, c) } else { best }).0;
    Ok(OrderSelection { r, table })
}

/// The three transition-matrix estimators compared in the risk experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimates {
    pub empirical: StateKernel,
    pub bmc: StateKernel,
    pub uniform: StateKernel,
}

/// Estimators from raw counts.
pub fn kernel_estimators(counts: &CountMatrix, assignment: &ClusterAssignment) -> Result<KernelEstimates> {
    kernel_estimators_smoothed(counts, assignment, 0.0)
}

/// Estimators after adding `smoothing` to every count.
pub fn kernel_estimators_smoothed(
    counts: &CountMatrix,
    assignment: &ClusterAssignment,
    smoothing: f64,
) -> Result<KernelEstimates> {
    let n = counts.n();
    if assignment.n() != n {
        return Err(BmcError::DimensionMismatch { expected: n, found: assignment.n() });
    }
    if !(smoothing >= 0.0) {
        return Err(BmcError::InvalidParameter(format!("smoothing {smoothing} must be nonnegative")));
    }
    let mut dense = vec![smoothing; n * n];
    counts.entries().iter().for_each(|&(i, j, c)| dense[i * n + j] += c as f64);
    Ok(KernelEstimates {
        empirical: empirical_from_dense(n, &dense)?,
        bmc: bmc_from_dense(n, &dense, assignment)?,
        uniform: StateKernel::new(n, vec![1.0 / n as f64; n * n])?,
    })
}

fn empirical_from_dense(n: usize, dense: &[f64]) -> Result<StateKernel> {
    let mut rows = dense.to_vec();
    for row in rows.chunks_mut(n) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        }
    }
    StateKernel::with_zero_rows(n, rows)
}

fn bmc_from_dense(n: usize, dense: &[f64], assignment: &ClusterAssignment) -> Result<StateKernel> {
    let m = assignment.m();
    let labels = assignment.labels();
    let sizes = assignment.sizes();
    let mut blocks = vec![vec![0.0; m]; m];
    for i in 0..n {
        for j in 0..n {
            blocks[labels[i]][labels[j]] += dense[i * n + j];
        }
    }
    for (a, row) in blocks.iter_mut().enumerate() {
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            return Err(BmcError::ZeroMassCluster(a));
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    let mut rows = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (labels[i], labels[j]);
            rows[i * n + j] = blocks[a][b] / sizes[b] as f64;
        }
    }
    StateKernel::with_zero_rows(n, rows)
}

/// Operator norm of `truth - estimate`.
pub fn estimation_risk(truth: &StateKernel, estimate: &StateKernel) -> Result<f64> {
    if truth.n() != estimate.n() {
        return Err(BmcError::DimensionMismatch { expected: truth.n(), found: estimate.n() });
    }
    let n = truth.n();
    let diff = DMatrix::from_fn(n, n, |i, j| truth.get(i, j) - estimate.get(i, j));
    Ok(operator_norm(&diff))
}

/// Estimation errors of one seeded run at one path length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRow {
    pub length: usize,
    pub seed_index: usize,
    pub r_emp: f64,
    pub r_bmc: f64,
    pub r_unif: f64,
}

/// Estimation errors of the three estimators against
/// `(1 - epsilon) P_BMC + epsilon * delta` on paths of each requested
/// length. The BMC estimator uses clusters recovered by
/// [`cluster_pipeline`] with `iterations` improvement passes.
pub fn risk_curve_experiment(
    model: &ClusterModel,
    delta: &StateKernel,
    epsilon: f64,
    lengths: &[usize],
    seeds: usize,
    iterations: usize,
    seed: u64,
) -> Result<Vec<RiskRow>> {
    let truth = state_kernel_of(model).mix(delta, epsilon)?;
    let jobs: Vec<(usize, usize)> = lengths.iter().flat_map(|&l| (0..seeds).map(move |s| (l, s))).collect();
    jobs.par_iter()
        .map(|&(length, s)| {
            let run_seed = derive_seed(derive_seed(seed, s as u64), length as u64);
            let path = sample_perturbed_bmc(model, delta, epsilon, length, Start::Equilibrium, run_seed)?;
            let counts = frequency_matrix(&path)?;
            let assignment = cluster_pipeline(&counts, length, model.m(), iterations, derive_seed(run_seed, 1))?;
            let est = kernel_estimators(&counts, &assignment)?;
            Ok(RiskRow {
                length,
                seed_index: s,
                r_emp: estimation_risk(&truth, &est.empirical)?,
                r_bmc: estimation_risk(&truth, &est.bmc)?,
                r_unif: estimation_risk(&truth, &est.uniform)?,
            })
        })
        .collect()
}

/// Base kernels for the over/underfit experiment, fitted on a state path.
#[derive(Debug, Clone)]
pub struct OrderBaseModels {
    /// Every row equals the empirical state frequencies.
    pub order0: StateKernel,
    /// Empirical transition matrix; unvisited rows are uniform.
    pub order1: StateKernel,
    pub start: usize,
}

impl OrderBaseModels {
    pub fn fit(path: &SamplePath) -> Result<Self> {
        let n = path.n();
        let counts = frequency_matrix(path)?;
        let mut freq = vec![0.0; n];
        path.symbols().iter().for_each(|&s| freq[s] += 1.0);
        let total = path.len() as f64;
        freq.iter_mut().for_each(|x| *x /= total);
        let order0 = StateKernel::new(n, freq.iter().cycle().take(n * n).copied().collect())?;
        let mut rows = vec![0.0; n * n];
        counts.entries().iter().for_each(|&(i, j, c)| rows[i * n + j] = c as f64);
        normalize_rows_or_uniform(n, &mut rows);
        Ok(Self { order0, order1: StateKernel::new(n, rows)?, start: path.symbols()[0] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderErrorRow {
    pub epsilon: f64,
    /// Share of order-0 generated runs where order 1 was selected.
    pub e_over: f64,
    /// Share of order-1 generated runs where order 0 was selected.
    pub e_under: f64,
    pub repetitions: usize,
}

/// Heavy-tailed zeroth-order nuisance kernel: one normalized row of i.i.d.
/// Zipf(s) entries repeated for every state.
fn heavy_tailed_rank_one(n: usize, s: f64, seed: u64) -> Result<StateKernel> {
    let zipf = ZipfTable::new(s);
    let mut rng = crate::rng::stream_rng(seed, crate::rng::streams::NUISANCE);
    let row: Vec<f64> = (0..n).map(|_| zipf.sample(&mut rng)).collect();
    let total: f64 = row.iter().sum();
    StateKernel::new(n, row.iter().map(|x| x / total).cycle().take(n * n).collect())
}

/// Over- and underfit frequencies of CAIC restricted to orders {0, 1}.
///
/// Order-0 runs mix the order-0 base with a heavy-tailed first-order
/// kernel; order-1 runs mix the order-1 base with a heavy-tailed
/// zeroth-order kernel. Runs start at the first state of the base path,
/// have `length` steps and are clustered with `assignment`. Repetition `k`
/// uses nuisance kernels and paths seeded from `derive_seed(seed, k)`.
pub fn order_error_experiment(
    base: &OrderBaseModels,
    assignment: &ClusterAssignment,
    epsilons: &[f64],
    repetitions: usize,
    length: usize,
    zipf_s: f64,
    seed: u64,
) -> Result<Vec<OrderErrorRow>> {
    let n = base.order0.n();
    if assignment.n() != n {
        return Err(BmcError::DimensionMismatch { expected: n, found: assignment.n() });
    }
    let m = assignment.m();
    let jobs: Vec<(usize, usize)> = (0..epsilons.len()).flat_map(|e| (0..repetitions).map(move |k| (e, k))).collect();
    let outcomes: Vec<(bool, bool)> = jobs
        .par_iter()
        .map(|&(e, k)| {
            let rep = derive_seed(seed, k as u64);
            let mut spec = PerturbationSpec::new(PerturbationKind::HeavyTailed).with_seed(derive_seed(rep, 0));
            spec.s = zipf_s;
            let first_order = make_perturbation(&spec, n)?;
            let zeroth_order = heavy_tailed_rank_one(n, zipf_s, derive_seed(rep, 1))?;
            let start = Start::State(base.start);
            let w0 = sample_mixture(&base.order0, &first_order, epsilons[e], length, start, derive_seed(rep, 2))?;
            let w1 = sample_mixture(&base.order1, &zeroth_order, epsilons[e], length, start, derive_seed(rep, 3))?;
            let over = select_order(&w0.map_states(assignment.labels(), m)?, 1)?.r == 1;
            let under = select_order(&w1.map_states(assignment.labels(), m)?, 1)?.r == 0;
            Ok((over, under))
        })
        .collect::<Result<_>>()?;
    Ok(epsilons
        .iter()
        .enumerate()
        .map(|(e, &epsilon)| {
            let chunk = &outcomes[e * repetitions..(e + 1) * repetitions];
            let share = |f: fn(&(bool, bool)) -> bool| chunk.iter().filter(|o| f(o)).count() as f64 / repetitions as f64;
            OrderErrorRow { epsilon, e_over: share(|o| o.0), e_under: share(|o| o.1), repetitions }
        })
        .collect())
}
