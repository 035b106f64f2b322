//! Seeded samplers for Block Markov Chains and their variants.
//!
//! All samplers consume an explicit `u64` seed and are deterministic given
//! their inputs. Cluster-level moves and within-cluster draws use stream
//! [`streams::MAIN`]; the perturbation coin of the perturbed sampler uses
//! [`streams::COIN`] and the nuisance kernel uses [`streams::NUISANCE`], so an
//! `epsilon = 0` run reproduces [`sample_bmc`] bit for bit.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution as _, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{BmcError, Result};
use crate::model::{cluster_equilibrium, ClusterModel, Distribution, StateKernel};
use crate::modelsel::OrderModel;
use crate::rng::{stream_rng, streams, BmcRng};

/// Bijection between symbol strings and dense ids.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.symbols == other.symbols
    }
}

impl Vocabulary {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (id, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), id).is_some() {
                return Err(BmcError::Parse(format!("duplicate vocabulary symbol {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// An observed trajectory `X_1, ..., X_l` over the alphabet `{0..n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    n: usize,
    symbols: Vec<usize>,
    vocabulary: Option<Vocabulary>,
}

impl SamplePath {
    pub fn new(n: usize, symbols: Vec<usize>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(BmcError::PathTooShort { len: 0, min: 1 });
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s >= n) {
            return Err(BmcError::InvalidParameter(format!("symbol {bad} outside alphabet of size {n}")));
        }
        Ok(Self { n, symbols, vocabulary: None })
    }

    pub fn with_vocabulary(symbols: Vec<usize>, vocabulary: Vocabulary) -> Result<Self> {
        let mut path = Self::new(vocabulary.len(), symbols)?;
        path.vocabulary = Some(vocabulary);
        Ok(path)
    }

    pub(crate) fn from_parts(n: usize, symbols: Vec<usize>, vocabulary: Option<Vocabulary>) -> Self {
        Self { n, symbols, vocabulary }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        self.vocabulary.as_ref()
    }

    /// Maps every state through `labels`, yielding a path over `m` symbols.
    pub fn map_states(&self, labels: &[usize], m: usize) -> Result<SamplePath> {
        if labels.len() != self.n {
            return Err(BmcError::DimensionMismatch { expected: self.n, found: labels.len() });
        }
        SamplePath::new(m, self.symbols.iter().map(|&s| labels[s]).collect())
    }

    /// Contiguous sub-path `[start, end)`. Keeps `n` and the vocabulary.
    pub fn slice(&self, start: usize, end: usize) -> Result<SamplePath> {
        if start >= end || end > self.len() {
            return Err(BmcError::InvalidParameter(format!("bad slice {start}..{end} of length {}", self.len())));
        }
        Ok(Self::from_parts(self.n, self.symbols[start..end].to_vec(), self.vocabulary.clone()))
    }
}

/// How the first state of a path is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    #[default]
    Equilibrium,
    State(usize),
}

/// Inverse-CDF sampler over the rows of a kernel.
struct RowSampler {
    n: usize,
    cdf: Vec<f64>,
    last: Vec<Option<usize>>,
}

impl RowSampler {
    fn new(kernel: &StateKernel) -> Self {
        let n = kernel.n();
        let mut cdf = Vec::with_capacity(n * n);
        let mut last = Vec::with_capacity(n);
        for i in 0..n {
            let row = kernel.row(i);
            let mut acc = 0.0;
            for &x in row {
                acc += x;
                cdf.push(acc);
            }
            last.push(row.iter().rposition(|&x| x > 0.0));
        }
        Self { n, cdf, last }
    }

    fn sample(&self, i: usize, rng: &mut BmcRng) -> Result<usize> {
        let last = self.last[i].ok_or(BmcError::MissingRow { window: vec![i] })?;
        let u: f64 = rng.random();
        Ok(draw_from_cdf(&self.cdf[i * self.n..(i + 1) * self.n], u, last))
    }
}

/// Smallest index whose cumulative weight exceeds `u`, clamped to `last`.
fn draw_from_cdf(cdf: &[f64], u: f64, last: usize) -> usize {
    let total = cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u * total).min(last)
}

fn cdf_of(weights: &[f64]) -> (Vec<f64>, usize) {
    let mut acc = 0.0;
    let cdf = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    (cdf, last)
}

fn check_length(length: usize) -> Result<()> {
    if length == 0 {
        return Err(BmcError::PathTooShort { len: 0, min: 1 });
    }
    Ok(())
}

/// Samples a path of a first-order chain with the given kernel.
pub fn sample_mc(kernel: &StateKernel, length: usize, start: Start, seed: u64) -> Result<SamplePath> {
    check_length(length)?;
    let n = kernel.n();
    let mut rng = stream_rng(seed, streams::MAIN);
    let first = match start {
        Start::State(s) if s < n => s,
        Start::State(s) => return Err(BmcError::InvalidParameter(format!("start state {s} >= n = {n}"))),
        Start::Equilibrium => {
            let pi = kernel.stationary()?;
            let (cdf, last) = cdf_of(pi.values());
            draw_from_cdf(&cdf, rng.random(), last)
        }
    };
    let sampler = RowSampler::new(kernel);
    let mut symbols = Vec::with_capacity(length);
    symbols.push(first);
    let mut x = first;
    for _ in 1..length {
        x = sampler.sample(x, &mut rng)?;
        symbols.push(x);
    }
    Ok(SamplePath::from_parts(n, symbols, None))
}

/// Cluster-then-uniform-member sampler for a BMC, without materializing the
/// `n x n` kernel.
struct BmcSampler {
    sigma: Vec<usize>,
    members: Vec<Vec<usize>>,
    cluster_cdf: Vec<(Vec<f64>, usize)>,
}

impl BmcSampler {
    fn new(model: &ClusterModel) -> Self {
        Self {
            sigma: model.sigma().to_vec(),
            members: model.members(),
            cluster_cdf: model.p().iter().map(|row| cdf_of(row)).collect(),
        }
    }

    fn step(&self, x: usize, rng: &mut BmcRng) -> usize {
        let (cdf, last) = &self.cluster_cdf[self.sigma[x]];
        let b = draw_from_cdf(cdf, rng.random(), *last);
        self.uniform_member(b, rng)
    }

    fn uniform_member(&self, cluster: usize, rng: &mut BmcRng) -> usize {
        let members = &self.members[cluster];
        members[rng.random_range(0..members.len())]
    }

    fn start(&self, model: &ClusterModel, start: Start, rng: &mut BmcRng) -> Result<usize> {
        match start {
            Start::State(s) if s < model.n() => Ok(s),
            Start::State(s) => Err(BmcError::InvalidParameter(format!("start state {s} >= n = {}", model.n()))),
            Start::Equilibrium => {
                let pi = cluster_equilibrium(model.p())?;
                let (cdf, last) = cdf_of(pi.values());
                let k = draw_from_cdf(&cdf, rng.random(), last);
                Ok(self.uniform_member(k, rng))
            }
        }
    }
}

/// Samples a BMC path.
pub fn sample_bmc(model: &ClusterModel, length: usize, start: Start, seed: u64) -> Result<SamplePath> {
    check_length(length)?;
    let sampler = BmcSampler::new(model);
    let mut rng = stream_rng(seed, streams::MAIN);
    let mut x = sampler.start(model, start, &mut rng)?;
    let mut symbols = Vec::with_capacity(length);
    symbols.push(x);
    for _ in 1..length {
        x = sampler.step(x, &mut rng);
        symbols.push(x);
    }
    Ok(SamplePath::from_parts(model.n(), symbols, None))
}

/// Samples a zeroth-order BMC: i.i.d. symbols whose cluster follows `eta`
/// and which are uniform inside the cluster. Cluster `k` occupies the
/// contiguous ids after clusters `0..k`.
pub fn sample_bmc0(eta: &Distribution, sizes: &[usize], length: usize, seed: u64) -> Result<SamplePath> {
    check_length(length)?;
    if sizes.len() != eta.len() {
        return Err(BmcError::DimensionMismatch { expected: eta.len(), found: sizes.len() });
    }
    if let Some(k) = sizes.iter().position(|&s| s == 0) {
        return Err(BmcError::EmptyCluster(k));
    }
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let n: usize = sizes.iter().sum();
    let (cdf, last) = cdf_of(eta.values());
    let mut rng = stream_rng(seed, streams::MAIN);
    let symbols = (0..length)
        .map(|_| {
            let k = draw_from_cdf(&cdf, rng.random(), last);
            offsets[k] + rng.random_range(0..sizes[k])
        })
        .collect();
    Ok(SamplePath::from_parts(n, symbols, None))
}

/// Samples an `r`th-order chain. The path starts with `initial_window`
/// (length `r`) and is extended to `length` symbols in total.
pub fn sample_rth_order(q: &OrderModel, length: usize, seed: u64, initial_window: &[usize]) -> Result<SamplePath> {
    let (m, r) = (q.m(), q.r());
    if initial_window.len() != r {
        return Err(BmcError::DimensionMismatch { expected: r, found: initial_window.len() });
    }
    if length < r.max(1) {
        return Err(BmcError::PathTooShort { len: length, min: r.max(1) });
    }
    if let Some(&bad) = initial_window.iter().find(|&&s| s >= m) {
        return Err(BmcError::InvalidParameter(format!("window symbol {bad} >= m = {m}")));
    }
    let mut rng = stream_rng(seed, streams::MAIN);
    let mut symbols = initial_window.to_vec();
    symbols.reserve(length - r);
    let mut cdf_cache: HashMap<usize, (Vec<f64>, usize)> = HashMap::new();
    while symbols.len() < length {
        let window = &symbols[symbols.len() - r..];
        let key = q.window_index(window);
        let entry = match cdf_cache.get(&key) {
            Some(e) => e,
            None => {
                let row = q.row(key);
                if row.iter().all(|&x| x == 0.0) {
                    return Err(BmcError::MissingRow { window: window.to_vec() });
                }
                cdf_cache.entry(key).or_insert_with(|| cdf_of(&row))
            }
        };
        symbols.push(draw_from_cdf(&entry.0, rng.random(), entry.1));
    }
    Ok(SamplePath::from_parts(m, symbols, None))
}

/// The four nuisance-kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Rows drawn uniformly from the simplex: Dirichlet(1/n, ..., 1/n).
    UniformStochastic,
    /// Rank one: every row is the same normalized Exponential(1) vector.
    Degree0,
    /// Row-normalized i.i.d. Zipf(s) entries.
    HeavyTailed,
    /// Row-normalized `A + cJ` for a directed Erdős–Rényi adjacency `A`
    /// with mean out-degree `d` and `J = 1/n`.
    Sparse,
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::UniformStochastic => "uniform_stochastic",
            Self::Degree0 => "degree0",
            Self::HeavyTailed => "heavy_tailed",
            Self::Sparse => "sparse",
        })
    }
}

/// Support of the truncated Zipf law used for heavy-tailed entries.
pub const ZIPF_SUPPORT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Zipf exponent (heavy-tailed).
    pub s: f64,
    /// Mean out-degree (sparse).
    pub d: f64,
    /// Offset weight of the constant matrix (sparse).
    pub c: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind) -> Self {
        Self { kind, s: 1.5, d: 5.0, c: 0.1, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 1.0) {
            return Err(BmcError::InvalidParameter(format!("Zipf exponent s = {} must exceed 1", self.s)));
        }
        if !(self.d > 0.0) || !(self.c > 0.0) {
            return Err(BmcError::InvalidParameter("d and c must be positive".into()));
        }
        Ok(())
    }
}

impl FromStr for PerturbationSpec {
    type Err = BmcError;

    /// Parses `kind=heavy_tailed,s=1.5,seed=3`. Unspecified parameters keep
    /// their defaults (`s = 1.5`, `d = 5`, `c = 0.1`, `seed = 0`).
    fn from_str(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut spec = PerturbationSpec::new(PerturbationKind::HeavyTailed);
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| BmcError::Parse(format!("expected key=value, got {part:?}")))?;
            let num = || value.parse::<f64>().map_err(|e| BmcError::Parse(format!("{key}: {e}")));
            match key {
                "kind" => {
                    kind = Some(match value {
                        "uniform_stochastic" | "uniform" => PerturbationKind::UniformStochastic,
                        "degree0" => PerturbationKind::Degree0,
                        "heavy_tailed" => PerturbationKind::HeavyTailed,
                        "sparse" => PerturbationKind::Sparse,
                        other => return Err(BmcError::Parse(format!("unknown perturbation kind {other:?}"))),
                    })
                }
                "s" => spec.s = num()?,
                "d" => spec.d = num()?,
                "c" => spec.c = num()?,
                "seed" => spec.seed = value.parse().map_err(|e| BmcError::Parse(format!("seed: {e}")))?,
                other => return Err(BmcError::Parse(format!("unknown perturbation parameter {other:?}"))),
            }
        }
        spec.kind = kind.ok_or_else(|| BmcError::Parse("perturbation needs kind=...".into()))?;
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kind={},s={},d={},c={},seed={}", self.kind, self.s, self.d, self.c, self.seed)
    }
}

/// Inverse-CDF table for Zipf(s) truncated to `{1..ZIPF_SUPPORT}`.
pub(crate) struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub(crate) fn new(s: f64) -> Self {
        let (cdf, _) = cdf_of(&(1..=ZIPF_SUPPORT).map(|k| (k as f64).powf(-s)).collect::<Vec<_>>());
        Self { cdf }
    }

    pub(crate) fn sample(&self, rng: &mut BmcRng) -> f64 {
        (draw_from_cdf(&self.cdf, rng.random(), ZIPF_SUPPORT - 1) + 1) as f64
    }
}

/// Builds a row-stochastic nuisance kernel of the requested family.
pub fn make_perturbation(spec: &PerturbationSpec, n: usize) -> Result<StateKernel> {
    spec.validate()?;
    if n < 2 {
        return Err(BmcError::InvalidParameter("perturbation kernels need n >= 2".into()));
    }
    let mut rng = stream_rng(spec.seed, streams::NUISANCE);
    let mut rows = vec![0.0; n * n];
    match spec.kind {
        PerturbationKind::UniformStochastic => {
            let gamma = Gamma::new(1.0 / n as f64, 1.0).expect("positive shape");
            rows.iter_mut().for_each(|x| *x = gamma.sample(&mut rng));
        }
        PerturbationKind::Degree0 => {
            let weights: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
            for row in rows.chunks_mut(n) {
                row.copy_from_slice(&weights);
            }
        }
        PerturbationKind::HeavyTailed => {
            let zipf = ZipfTable::new(spec.s);
            rows.iter_mut().for_each(|x| *x = zipf.sample(&mut rng));
        }
        PerturbationKind::Sparse => {
            let edge = (spec.d / (n - 1) as f64).min(1.0);
            let offset = spec.c / n as f64;
            for i in 0..n {
                for j in 0..n {
                    let a = if i != j && rng.random::<f64>() < edge { 1.0 } else { 0.0 };
                    rows[i * n + j] = a + offset;
                }
            }
        }
    }
    normalize_rows_or_uniform(n, &mut rows);
    StateKernel::new(n, rows)
}

/// Divides each row by its sum; rows summing to zero become uniform.
pub(crate) fn normalize_rows_or_uniform(n: usize, rows: &mut [f64]) {
    for row in rows.chunks_mut(n) {
        let total: f64 = row.iter().sum();
        if total > 0.0 && total.is_finite() {
            row.iter_mut().for_each(|x| *x /= total);
        } else {
            row.iter_mut().for_each(|x| *x = 1.0 / n as f64);
        }
    }
}

/// Samples `(1 - epsilon) * P_BMC + epsilon * delta` by flipping an
/// independent Bernoulli(epsilon) coin for every transition.
///
/// An equilibrium start uses the stationary law of the mixed kernel
/// (the BMC equilibrium when `epsilon == 0`).
pub fn sample_perturbed_bmc(
    model: &ClusterModel,
    delta: &StateKernel,
    epsilon: f64,
    length: usize,
    start: Start,
    seed: u64,
) -> Result<SamplePath> {
    check_length(length)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(BmcError::InvalidParameter(format!("epsilon = {epsilon} outside [0,1]")));
    }
    if delta.n() != model.n() {
        return Err(BmcError::DimensionMismatch { expected: model.n(), found: delta.n() });
    }
    let bmc = BmcSampler::new(model);
    let nuisance = RowSampler::new(delta);
    let mut main = stream_rng(seed, streams::MAIN);
    let mut coin = stream_rng(seed, streams::COIN);
    let mut side = stream_rng(seed, streams::NUISANCE);
    let mut x = if epsilon == 0.0 || matches!(start, Start::State(_)) {
        bmc.start(model, start, &mut main)?
    } else {
        let mixed = crate::model::state_kernel_of(model).mix(delta, epsilon)?;
        let pi = mixed.stationary()?;
        let (cdf, last) = cdf_of(pi.values());
        draw_from_cdf(&cdf, main.random(), last)
    };
    let mut symbols = Vec::with_capacity(length);
    symbols.push(x);
    for _ in 1..length {
        x = if coin.random::<f64>() < epsilon {
            nuisance.sample(x, &mut side)?
        } else {
            bmc.step(x, &mut main)
        };
        symbols.push(x);
    }
    Ok(SamplePath::from_parts(model.n(), symbols, None))
}

/// Samples a per-step mixture of two arbitrary kernels,
/// `(1 - epsilon) * base + epsilon * delta`, with the same stream layout as
/// [`sample_perturbed_bmc`].
pub fn sample_mixture(
    base: &StateKernel,
    delta: &StateKernel,
    epsilon: f64,
    length: usize,
    start: Start,
    seed: u64,
) -> Result<SamplePath> {
    check_length(length)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(BmcError::InvalidParameter(format!("epsilon = {epsilon} outside [0,1]")));
    }
    if delta.n() != base.n() {
        return Err(BmcError::DimensionMismatch { expected: base.n(), found: delta.n() });
    }
    let n = base.n();
    let base_rows = RowSampler::new(base);
    let nuisance = RowSampler::new(delta);
    let mut main = stream_rng(seed, streams::MAIN);
    let mut coin = stream_rng(seed, streams::COIN);
    let mut side = stream_rng(seed, streams::NUISANCE);
    let mut x = match start {
        Start::State(s) if s < n => s,
        Start::State(s) => return Err(BmcError::InvalidParameter(format!("start state {s} >= n = {n}"))),
        Start::Equilibrium => {
            let pi = base.mix(delta, epsilon)?.stationary()?;
            let (cdf, last) = cdf_of(pi.values());
            draw_from_cdf(&cdf, main.random(), last)
        }
    };
    let mut symbols = Vec::with_capacity(length);
    symbols.push(x);
    for _ in 1..length {
        x = if coin.random::<f64>() < epsilon {
            nuisance.sample(x, &mut side)?
        } else {
            base_rows.sample(x, &mut main)?
        };
        symbols.push(x);
    }
    Ok(SamplePath::from_parts(n, symbols, None))
}

/// Samples a degree-corrected BMC: the cluster chain follows `p`, and the
/// next state inside cluster `k` is drawn from `mu[k]`, a distribution over
/// the members of `V_k` in increasing id order.
pub fn sample_dcbmc(
    model: &ClusterModel,
    mu: &[Distribution],
    length: usize,
    start: Start,
    seed: u64,
) -> Result<SamplePath> {
    check_length(length)?;
    let members = model.members();
    if mu.len() != model.m() {
        return Err(BmcError::DimensionMismatch { expected: model.m(), found: mu.len() });
    }
    for (k, (dist, mem)) in mu.iter().zip(&members).enumerate() {
        if dist.len() != mem.len() {
            return Err(BmcError::InvalidModel(format!(
                "mu[{k}] has {} entries but cluster {k} has {} states",
                dist.len(),
                mem.len()
            )));
        }
    }
    let within: Vec<(Vec<f64>, usize)> = mu.iter().map(|d| cdf_of(d.values())).collect();
    let cluster_cdf: Vec<(Vec<f64>, usize)> = model.p().iter().map(|row| cdf_of(row)).collect();
    let sigma = model.sigma();
    let mut rng = stream_rng(seed, streams::MAIN);
    let draw_in = |k: usize, rng: &mut BmcRng| {
        let (cdf, last) = &within[k];
        members[k][draw_from_cdf(cdf, rng.random(), *last)]
    };
    let mut x = match start {
        Start::State(s) if s < model.n() => s,
        Start::State(s) => return Err(BmcError::InvalidParameter(format!("start state {s} >= n = {}", model.n()))),
        Start::Equilibrium => {
            let pi = cluster_equilibrium(model.p())?;
            let (cdf, last) = cdf_of(pi.values());
            let k = draw_from_cdf(&cdf, rng.random(), last);
            draw_in(k, &mut rng)
        }
    };
    let mut symbols = Vec::with_capacity(length);
    symbols.push(x);
    for _ in 1..length {
        let (cdf, last) = &cluster_cdf[sigma[x]];
        let b = draw_from_cdf(cdf, rng.random(), *last);
        x = draw_in(b, &mut rng);
        symbols.push(x);
    }
    Ok(SamplePath::from_parts(model.n(), symbols, None))
}

/// Per-cluster within-cluster laws from normalized i.i.d. Exponential(1)
/// draws, as used for degree-corrected experiments.
pub fn exponential_within_cluster(model: &ClusterModel, seed: u64) -> Vec<Distribution> {
    let mut rng = stream_rng(seed, streams::NUISANCE);
    model
        .sizes()
        .iter()
        .map(|&size| {
            let w: Vec<f64> = (0..size).map(|_| Exp1.sample(&mut rng)).collect();
            Distribution::from_weights(&w).expect("exponential draws are positive")
        })
        .collect()
}

/// Default path length `floor(30 n ln n)`.
pub fn default_length(n: usize) -> usize {
    (30.0 * n as f64 * (n as f64).ln()).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::state_kernel_of;

    fn three_cluster_p() -> Vec<Vec<f64>> {
        vec![vec![0.9, 0.1, 0.0], vec![0.0, 0.1, 0.9], vec![0.3, 0.7, 0.0]]
    }

    #[test]
    fn permutation_kernel_cycles() {
        let k = StateKernel::new(3, vec![0., 1., 0., 0., 0., 1., 1., 0., 0.]).unwrap();
        let path = sample_mc(&k, 7, Start::State(0), 9).unwrap();
        assert_eq!(path.symbols(), &[0, 1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn same_seed_same_path() {
        let model = ClusterModel::balanced(30, three_cluster_p()).unwrap();
        let a = sample_bmc(&model, 1000, Start::Equilibrium, 5).unwrap();
        let b = sample_bmc(&model, 1000, Start::Equilibrium, 5).unwrap();
        let c = sample_bmc(&model, 1000, Start::Equilibrium, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn deterministic_cluster_cycle() {
        let p = vec![vec![0., 1., 0.], vec![0., 0., 1.], vec![1., 0., 0.]];
        let model = ClusterModel::new(3, vec![0, 1, 2], p).unwrap();
        let path = sample_bmc(&model, 6, Start::State(1), 0).unwrap();
        assert_eq!(path.symbols(), &[1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn bmc0_degenerate_mass() {
        let eta = Distribution::new(vec![1.0, 0.0]).unwrap();
        let path = sample_bmc0(&eta, &[3, 4], 500, 1).unwrap();
        assert!(path.symbols().iter().all(|&s| s < 3));
        assert_eq!(path.n(), 7);
    }

    #[test]
    fn bmc0_share_matches_eta() {
        let eta = Distribution::new(vec![0.3, 0.7]).unwrap();
        let path = sample_bmc0(&eta, &[5, 5], 100_000, 3).unwrap();
        let share = path.symbols().iter().filter(|&&s| s < 5).count() as f64 / 1e5;
        assert!((share - 0.3).abs() < 0.01, "{share}");
    }

    #[test]
    fn parity_chain_of_order_two() {
        // next = xor of the last two symbols
        let mut rows = std::collections::BTreeMap::new();
        rows.insert(0, vec![1.0, 0.0]); // (0,0) -> 0
        rows.insert(1, vec![0.0, 1.0]); // (0,1) -> 1
        rows.insert(2, vec![0.0, 1.0]); // (1,0) -> 1
        rows.insert(3, vec![1.0, 0.0]); // (1,1) -> 0
        let q = OrderModel::from_rows(2, 2, rows).unwrap();
        let path = sample_rth_order(&q, 9, 0, &[0, 1]).unwrap();
        assert_eq!(path.symbols(), &[0, 1, 1, 0, 1, 1, 0, 1, 1]);
    }

    #[test]
    fn order_zero_and_one_reductions() {
        let mut rows = std::collections::BTreeMap::new();
        rows.insert(0, vec![0.0, 0.0, 1.0]);
        let q = OrderModel::from_rows(3, 0, rows).unwrap();
        let path = sample_rth_order(&q, 5, 0, &[]).unwrap();
        assert_eq!(path.symbols(), &[2, 2, 2, 2, 2]);

        let k = StateKernel::new(2, vec![0.3, 0.7, 0.6, 0.4]).unwrap();
        let q1 = OrderModel::from_kernel(&k);
        let a = sample_rth_order(&q1, 200, 4, &[1]).unwrap();
        let b = sample_mc(&k, 200, Start::State(1), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_row_is_reported() {
        let mut rows = std::collections::BTreeMap::new();
        rows.insert(0, vec![0.0, 1.0]);
        let q = OrderModel::from_rows(2, 1, rows).unwrap();
        assert!(matches!(sample_rth_order(&q, 5, 0, &[0]), Err(BmcError::MissingRow { .. })));
    }

    #[test]
    fn perturbations_are_stochastic() {
        for kind in [
            PerturbationKind::UniformStochastic,
            PerturbationKind::Degree0,
            PerturbationKind::HeavyTailed,
            PerturbationKind::Sparse,
        ] {
            for n in [2, 3, 17, 200] {
                let k = make_perturbation(&PerturbationSpec::new(kind).with_seed(n as u64), n).unwrap();
                for i in 0..n {
                    assert!((k.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(k.row(i).iter().all(|x| (0.0..=1.0).contains(x)));
                }
            }
        }
        let d0 = make_perturbation(&PerturbationSpec::new(PerturbationKind::Degree0), 10).unwrap();
        assert!((1..10).all(|i| d0.row(i) == d0.row(0)));
    }

    #[test]
    fn perturbation_spec_parsing() {
        let spec: PerturbationSpec = "kind=heavy_tailed,s=1.5".parse().unwrap();
        assert_eq!(spec.kind, PerturbationKind::HeavyTailed);
        assert_eq!(spec.s, 1.5);
        let spec: PerturbationSpec = "kind=sparse".parse().unwrap();
        assert_eq!((spec.d, spec.c), (5.0, 0.1));
        assert!("kind=heavy_tailed,s=0.5".parse::<PerturbationSpec>().is_err());
        assert!("s=2".parse::<PerturbationSpec>().is_err());
        let round: PerturbationSpec = spec.to_string().parse().unwrap();
        assert_eq!(round, spec);
    }

    #[test]
    fn epsilon_zero_is_bit_identical_to_bmc() {
        let model = ClusterModel::balanced(40, three_cluster_p()).unwrap();
        let delta = make_perturbation(&PerturbationSpec::new(PerturbationKind::HeavyTailed), 40).unwrap();
        let a = sample_perturbed_bmc(&model, &delta, 0.0, 5000, Start::Equilibrium, 12).unwrap();
        let b = sample_bmc(&model, 5000, Start::Equilibrium, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn epsilon_one_follows_delta() {
        let model = ClusterModel::balanced(3, vec![vec![1.0 / 3.0; 3]; 3]).unwrap();
        let delta = StateKernel::new(3, vec![0., 1., 0., 0., 0., 1., 1., 0., 0.]).unwrap();
        let path = sample_perturbed_bmc(&model, &delta, 1.0, 6, Start::State(2), 0).unwrap();
        assert_eq!(path.symbols(), &[2, 0, 1, 2, 0, 1]);
        let wrong = StateKernel::new(2, vec![0.5; 4]).unwrap();
        assert!(matches!(
            sample_perturbed_bmc(&model, &wrong, 0.1, 6, Start::State(0), 0),
            Err(BmcError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn uniform_mu_dcbmc_matches_bmc_frequencies() {
        let model = ClusterModel::balanced(6, three_cluster_p()).unwrap();
        let mu: Vec<Distribution> = model.sizes().iter().map(|&s| Distribution::uniform(s)).collect();
        let a = sample_dcbmc(&model, &mu, 200_000, Start::Equilibrium, 1).unwrap();
        let b = sample_bmc(&model, 200_000, Start::Equilibrium, 2).unwrap();
        let freq = |p: &SamplePath| {
            let mut c = [0.0; 6];
            p.symbols().iter().for_each(|&s| c[s] += 1.0 / p.len() as f64);
            c
        };
        let (fa, fb) = (freq(&a), freq(&b));
        for s in 0..6 {
            assert!((fa[s] - fb[s]).abs() < 0.01);
        }
    }

    #[test]
    fn reducible_kernel_cannot_start_at_equilibrium() {
        let k = StateKernel::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(sample_mc(&k, 5, Start::Equilibrium, 0), Err(BmcError::NonErgodic(_))));
        let kernel = state_kernel_of(&ClusterModel::balanced(4, three_cluster_p()[..1].iter().map(|_| vec![1.0]).collect()).unwrap());
        assert_eq!(kernel.n(), 4);
    }

    #[test]
    fn default_length_rule() {
        assert_eq!(default_length(300), (30.0 * 300.0 * 300f64.ln()).floor() as usize);
        assert_eq!(default_length(300), 51334);
        assert_eq!(default_length(1000), 207_232);
    }
}
