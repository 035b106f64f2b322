//! Command-line front end.
//!
//! Every subcommand reads its parameters from flags and an optional JSON
//! `--config` file with the same keys; flags win over the file, the file
//! wins over built-in defaults. The fully resolved parameters are written to
//! `config.json` in the output directory.
//!
//! Randomness comes from the single `--seed`; each consumer receives
//! `derive_seed(seed, k)` for a fixed per-purpose index `k`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cluster::{cluster_pipeline, estimate_params, misclassification_ratio, robustness_experiment, ClusterAssignment};
use crate::counts::{frequency_matrix, remove_self_jumps, trim, CountMatrix};
use crate::error::{BmcError, Result};
use crate::ingest::{cfidf_vectors, gps_to_states, sort_by_timestamp, tokenize, BoundingBox, CosineArgument};
use crate::io;
use crate::model::{state_kernel_of, ClusterModel, StateKernel};
use crate::modelsel::{
    holdout_split, kernel_estimators_smoothed, kl_report, mixing_time, order_error_experiment, risk_curve_experiment,
    select_order, OrderBaseModels,
};
use crate::rng::derive_seed;
use crate::simulate::{default_length, make_perturbation, sample_perturbed_bmc, SamplePath, PerturbationSpec, Start, Vocabulary};
use crate::spectra::{
    average_histograms, bulk_values, default_grid, estimate_lambda, frequency_profile, laplacian_profile, limiting_density,
    path_singular_values, compare_density, MatrixKind,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "BMCKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bmckit", version, about = "Block Markov Chain toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a path from a cluster model, optionally perturbed.
    Simulate(SimulateArgs),
    /// Recover clusters from a path or count matrix.
    Cluster(ClusterArgs),
    /// Compare two candidate kernels by their KL divergence rates.
    EvaluateKl(EvaluateKlArgs),
    /// Choose a Markov order by CAIC.
    SelectOrder(SelectOrderArgs),
    /// Singular-value histogram against its limiting density.
    Spectra(SpectraArgs),
    /// Convert tokens, GPS records or documents into library inputs.
    Ingest(IngestArgs),
    /// Run a batch experiment and write its table.
    Experiment(ExperimentArgs),
}

/// Failure classes, mapped to exit codes 2 and 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(BmcError),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(msg) => write!(f, "usage error: {msg}"),
            Self::Run(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<BmcError> for CliError {
    fn from(e: BmcError) -> Self {
        Self::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Run(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required<T: Clone>(value: &Option<T>, name: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| usage(format!("--{name} is required")))
}

fn input_file(value: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    let path = required(value, name)?;
    if !path.is_file() {
        return Err(usage(format!("--{name}: {} is not a readable file", path.display())));
    }
    Ok(path)
}

/// Path length: `auto` means `floor(30 n ln n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Length {
    Auto,
    Fixed(usize),
}

impl Length {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            Self::Auto => default_length(n),
            Self::Fixed(l) => l,
        }
    }
}

/// Accepts plain integers and integral scientific notation such as `5e4`.
fn parse_count(s: &str) -> std::result::Result<usize, String> {
    if let Ok(v) = s.parse::<usize>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 1e18 => Ok(v as usize),
        _ => Err(format!("expected a nonnegative integer, got {s:?}")),
    }
}

impl FromStr for Length {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            Ok(Self::Auto)
        } else {
            parse_count(s).map(Self::Fixed)
        }
    }
}

impl Serialize for Length {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Auto => ser.serialize_str("auto"),
            Self::Fixed(l) => ser.serialize_u64(*l as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Length {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(usize),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Number(l) => Ok(Self::Fixed(l)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Start state: `equilibrium` or a state id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StartArg(pub Start);

impl FromStr for StartArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "equilibrium" {
            return Ok(Self(Start::Equilibrium));
        }
        s.parse().map(|i| Self(Start::State(i))).map_err(|_| format!("expected `equilibrium` or a state id, got {s:?}"))
    }
}

impl Serialize for StartArg {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Start::Equilibrium => ser.serialize_str("equilibrium"),
            Start::State(i) => ser.serialize_u64(i as u64),
        }
    }
}

impl<'de> Deserialize<'de> for StartArg {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(usize),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Number(i) => Ok(Self(Start::State(i))),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn parse_lengths(s: &str) -> std::result::Result<usize, String> {
    parse_count(s)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// JSON config file; flags override its entries.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cluster model JSON (`m`, `sigma`, `p`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Rebuild the model with `n` states in balanced clusters.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of states in the path, or `auto` for floor(30 n ln n).
    #[arg(long)]
    pub length: Option<Length>,
    /// Nuisance kernel, e.g. `kind=heavy_tailed,s=1.5`.
    #[arg(long)]
    pub perturb: Option<String>,
    /// Probability of a nuisance step.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// `equilibrium` or a state id.
    #[arg(long)]
    pub start: Option<StartArg>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Path CSV.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Count matrix CSV, as an alternative to `--path`.
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Number of clusters.
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of highest-degree states to trim.
    #[arg(long)]
    pub gamma: Option<usize>,
    /// Improvement passes.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Path length; defaults to the path's length or the count total plus one.
    #[arg(long, value_parser = parse_lengths)]
    pub length: Option<usize>,
    /// Ground-truth assignment JSON; adds the misclassification ratio.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateKlArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Path CSV; the first half fits the candidates, the second evaluates.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Candidate P: `empirical`, `uniform`, `bmc:<assignment.json>` or `model:<model.json>`.
    #[arg(long)]
    pub p: Option<String>,
    /// Candidate Q, same forms as P.
    #[arg(long)]
    pub q: Option<String>,
    /// Mixing time used by the confidence bound, or `auto` for that of P.
    #[arg(long)]
    pub tau: Option<Length>,
    /// Confidence parameter in (0, 1).
    #[arg(long)]
    pub z: Option<f64>,
    /// Pseudo-count added to every transition before fitting.
    #[arg(long)]
    pub smoothing: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectOrderArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Path CSV.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Assignment JSON mapping states to clusters; without it the path is
    /// used as is.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    /// Largest order considered.
    #[arg(long)]
    pub r_max: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixArg {
    Frequency,
    Laplacian,
}

impl From<MatrixArg> for MatrixKind {
    fn from(m: MatrixArg) -> Self {
        match m {
            MatrixArg::Frequency => MatrixKind::Frequency,
            MatrixArg::Laplacian => MatrixKind::Laplacian,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Path CSV.
    #[arg(long)]
    pub path: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub matrix: Option<MatrixArg>,
    /// Cluster model for the limiting density; estimated from the path when
    /// absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of clusters when estimating the model.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Leading singular values excluded from the histogram; defaults to m.
    #[arg(long)]
    pub drop_leading: Option<usize>,
    /// Equal consecutive pieces whose histograms are averaged.
    #[arg(long)]
    pub pieces: Option<usize>,
    /// Density parameter; defaults to piece length / n^2.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Distance of the evaluation points from the real axis.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Grid points of the limiting density.
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestKind {
    /// One token per line.
    Tokens,
    /// CSV with `lat,lon,timestamp` columns.
    Gps,
    /// JSON array of token arrays, scored by cluster.
    Cfidf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineArg {
    Listing,
    CellLatitude,
    RecordLatitude,
}

impl From<CosineArg> for CosineArgument {
    fn from(c: CosineArg) -> Self {
        match c {
            CosineArg::Listing => CosineArgument::Listing,
            CosineArg::CellLatitude => CosineArgument::CellLatitude,
            CosineArg::RecordLatitude => CosineArgument::RecordLatitude,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub kind: Option<IngestKind>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Tokens seen fewer times are dropped.
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Number of most frequent tokens dropped.
    #[arg(long)]
    pub drop_top: Option<usize>,
    /// Grid cell size in kilometres.
    #[arg(long)]
    pub cell_km: Option<f64>,
    /// `lat_min,lat_max,lon_min,lon_max`; records outside are dropped.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub bbox: Option<Vec<f64>>,
    /// Latitude used in the longitude scale.
    #[arg(long, value_enum)]
    pub cosine: Option<CosineArg>,
    /// Sort GPS records by timestamp string first.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sort_by_time: Option<bool>,
    /// Collapse runs of the same state.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub remove_self_jumps: Option<bool>,
    /// Assignment JSON for `cfidf`.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    /// Vocabulary JSON (array of symbols) for `cfidf`.
    #[arg(long)]
    pub vocabulary: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Robustness,
    RiskCurve,
    OrderError,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub kind: Option<ExperimentKind>,
    /// Cluster model JSON (robustness, risk_curve).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Rebuild the model with `n` states in balanced clusters.
    #[arg(long)]
    pub n: Option<usize>,
    /// Nuisance kernel spec.
    #[arg(long)]
    pub perturb: Option<String>,
    /// Perturbation strengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    /// Path lengths for risk_curve, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_lengths)]
    pub lengths: Option<Vec<usize>>,
    /// Path length for robustness and order_error.
    #[arg(long)]
    pub length: Option<Length>,
    /// Seeds per table cell.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Repetitions per epsilon for order_error.
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Base path CSV for order_error.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Assignment JSON for order_error.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    /// Zipf exponent of the order_error nuisance kernels.
    #[arg(long)]
    pub zipf_s: Option<f64>,
}

/// Overlays the non-null entries of `flags` on the config file.
fn merge<T: Serialize + DeserializeOwned>(flags: &T, config: &Option<PathBuf>) -> CliResult<T> {
    let mut base = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| usage(format!("--config {}: {e}", path.display())))?
        }
        None => Value::Object(Default::default()),
    };
    let base_map = base.as_object_mut().ok_or_else(|| usage("config file must hold a JSON object"))?;
    let flag_value = serde_json::to_value(flags).map_err(BmcError::from)?;
    for (k, v) in flag_value.as_object().expect("argument structs serialize to objects") {
        if !v.is_null() {
            base_map.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(base).map_err(|e| usage(format!("invalid configuration: {e}")))
}

fn prepare_out(out: &Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = required(out, "out")?;
    fs::create_dir_all(&dir).map_err(BmcError::from)?;
    Ok(dir)
}

fn echo_config<T: Serialize>(dir: &Path, command: &str, resolved: &T) -> CliResult<()> {
    let mut value = serde_json::to_value(resolved).map_err(BmcError::from)?;
    if let Some(map) = value.as_object_mut() {
        map.retain(|_, v| !v.is_null());
        map.insert("command".into(), Value::String(command.into()));
    }
    io::write_json(&dir.join("config.json"), &value)?;
    Ok(())
}

/// Writes `text` and checks that it reads back unchanged.
fn write_checked(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(BmcError::from)?;
    if fs::read_to_string(path).map_err(BmcError::from)? != text {
        return Err(CliError::Run(BmcError::Parse(format!("{} did not read back intact", path.display()))));
    }
    Ok(())
}

fn load_model(path: &Path, n: Option<usize>) -> CliResult<ClusterModel> {
    let model: ClusterModel = io::read_json(path)?;
    Ok(match n {
        Some(n) if n != model.n() => ClusterModel::balanced(n, model.p().to_vec())?,
        _ => model,
    })
}

fn parse_perturb(text: &str, seed: u64, index: u64) -> CliResult<PerturbationSpec> {
    let spec: PerturbationSpec = text.parse().map_err(|e: BmcError| usage(format!("--perturb: {e}")))?;
    // Without an explicit seed the nuisance kernel draws from the run seed.
    Ok(if text.contains("seed=") { spec } else { spec.with_seed(derive_seed(seed, index)) })
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut a = merge(args, &args.config)?;
    let seed = *a.seed.get_or_insert(0);
    let model_path = input_file(&a.model, "model")?;
    let length = *a.length.get_or_insert(Length::Auto);
    let epsilon = *a.epsilon.get_or_insert(0.0);
    let start = a.start.get_or_insert(StartArg(Start::Equilibrium)).0;
    if epsilon != 0.0 && a.perturb.is_none() {
        return Err(usage("--epsilon needs --perturb"));
    }
    let dir = prepare_out(&a.out)?;
    let model = load_model(&model_path, a.n)?;
    a.n = Some(model.n());
    let length = length.resolve(model.n());
    a.length = Some(Length::Fixed(length));
    let delta = match &a.perturb {
        Some(text) => {
            let spec = parse_perturb(text, seed, 1)?;
            a.perturb = Some(spec.to_string());
            make_perturbation(&spec, model.n())?
        }
        None => StateKernel::new(model.n(), vec![1.0 / model.n() as f64; model.n() * model.n()])?,
    };
    let path = sample_perturbed_bmc(&model, &delta, epsilon, length, start, derive_seed(seed, 0))?;
    write_checked(&dir.join("path.csv"), &io::path_to_csv(&path))?;
    write_checked(&dir.join("counts.csv"), &io::counts_to_csv(&frequency_matrix(&path)?))?;
    write_checked(&dir.join("truth.json"), &io::to_json(&ClusterAssignment::from_model(&model))?)?;
    echo_config(&dir, "simulate", &a)
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    alpha: &'a [f64],
    pi_hat: &'a [f64],
    p_hat: &'a [Vec<f64>],
    sizes: Vec<usize>,
    rank_deficient: bool,
    empty_clusters: &'a [usize],
    #[serde(skip_serializing_if = "Option::is_none")]
    misclassification: Option<f64>,
}

pub fn cmd_cluster(args: &ClusterArgs) -> CliResult<()> {
    let mut a = merge(args, &args.config)?;
    let seed = *a.seed.get_or_insert(0);
    let m = required(&a.m, "m")?;
    let gamma = *a.gamma.get_or_insert(0);
    let iterations = *a.iterations.get_or_insert(10);
    let counts: CountMatrix = match (&a.path, &a.counts) {
        (Some(_), Some(_)) => return Err(usage("give either --path or --counts, not both")),
        (Some(_), None) => {
            let path = io::read_path(&input_file(&a.path, "path")?)?;
            a.length.get_or_insert(path.len());
            frequency_matrix(&path)?
        }
        (None, Some(_)) => {
            let counts = io::read_counts(&input_file(&a.counts, "counts")?)?;
            a.length.get_or_insert(counts.total() as usize + 1);
            counts
        }
        (None, None) => return Err(usage("--path or --counts is required")),
    };
    let length = a.length.expect("set above");
    let truth: Option<ClusterAssignment> = match &a.truth {
        Some(p) => Some(io::read_json(&input_file(&Some(p.clone()), "truth")?)?),
        None => None,
    };
    let dir = prepare_out(&a.out)?;
    let trimmed = trim(&counts, gamma)?;
    let assignment = cluster_pipeline(&trimmed, length, m, iterations, derive_seed(seed, 0))?;
    let params = estimate_params(&trimmed, length, &assignment)?;
    let misclassification = truth.as_ref().map(|t| misclassification_ratio(t, &assignment)).transpose()?;
    let report = ClusterReport {
        alpha: &params.alpha,
        pi_hat: &params.pi_hat,
        p_hat: &params.p_hat,
        sizes: assignment.sizes(),
        rank_deficient: assignment.flags().rank_deficient,
        empty_clusters: &assignment.flags().empty_clusters,
        misclassification,
    };
    write_checked(&dir.join("assignment.json"), &io::to_json(&assignment)?)?;
    write_checked(&dir.join("params.json"), &io::to_json(&report)?)?;
    echo_config(&dir, "cluster", &a)
}

fn candidate_kernel(spec: &str, train: &SamplePath, smoothing: f64, name: &str) -> CliResult<StateKernel> {
    let n = train.n();
    let counts = frequency_matrix(train)?;
    let single = ClusterAssignment::new(1, vec![0; n])?;
    let (kind, file) = match spec.split_once(':') {
        Some((k, f)) => (k, Some(PathBuf::from(f))),
        None => (spec, None),
    };
    match (kind, file) {
        ("empirical", None) => Ok(kernel_estimators_smoothed(&counts, &single, smoothing)?.empirical),
        ("uniform", None) => Ok(kernel_estimators_smoothed(&counts, &single, smoothing)?.uniform),
        ("bmc", Some(f)) => {
            let assignment: ClusterAssignment = io::read_json(&input_file(&Some(f), name)?)?;
            if assignment.n() != n {
                return Err(usage(format!("--{name}: assignment has {} states, path has {n}", assignment.n())));
            }
            Ok(kernel_estimators_smoothed(&counts, &assignment, smoothing)?.bmc)
        }
        ("model", Some(f)) => {
            let model = load_model(&input_file(&Some(f), name)?, None)?;
            if model.n() != n {
                return Err(usage(format!("--{name}: model has {} states, path has {n}", model.n())));
            }
            Ok(state_kernel_of(&model))
        }
        _ => Err(usage(format!("--{name}: unknown candidate {spec:?}"))),
    }
}

pub fn cmd_evaluate_kl(args: &EvaluateKlArgs) -> CliResult<()> {
    let mut a = merge(args, &args.config)?;
    a.seed.get_or_insert(0);
    let path_file = input_file(&a.path, "path")?;
    let p_spec = required(&a.p, "p")?;
    let q_spec = required(&a.q, "q")?;
    let z = *a.z.get_or_insert(0.05);
    let smoothing = *a.smoothing.get_or_insert(0.0);
    let tau = *a.tau.get_or_insert(Length::Fixed(20));
    let dir = prepare_out(&a.out)?;
    let path = io::read_path(&path_file)?;
    let (train, test) = holdout_split(&path)?;
    let p = candidate_kernel(&p_spec, &train, smoothing, "p")?;
    let q = candidate_kernel(&q_spec, &train, smoothing, "q")?;
    let tau = match tau {
        Length::Auto => mixing_time(&p)?,
        Length::Fixed(t) => t,
    };
    a.tau = Some(Length::Fixed(tau));
    let report = kl_report(&test, &p, &q, tau, z)?;
    write_checked(&dir.join("kl_report.json"), &io::to_json(&report)?)?;
    echo_config(&dir, "evaluate-kl", &a)?;
    println!("{} at level z={z} (D = {}, half-width {})", report.decision, report.d_hat, report.ci_halfwidth);
    Ok(())
}

pub fn cmd_select_order(args: &SelectOrderArgs) -> CliResult<()> {
    let mut a = merge(args, &args.config)?;
    a.seed.get_or_insert(0);
    let path_file = input_file(&a.path, "path")?;
    let r_max = *a.r_max.get_or_insert(4);
    let dir = prepare_out(&a.out)?;
    let path = io::read_path(&path_file)?;
    let cluster_path = match &a.assignment {
        Some(f) => {
            let assignment: ClusterAssignment = io::read_json(&input_file(&Some(f.clone()), "assignment")?)?;
            path.map_states(assignment.labels(), assignment.m())?
        }
        None => path,
    };
    let selection = select_order(&cluster_path, r_max)?;
    write_checked(&dir.join("caic.csv"), &io::caic_to_csv(&selection))?;
    write_checked(&dir.join("selection.json"), &io::to_json(&selection)?)?;
    echo_config(&dir, "select-order", &a)?;
    println!("r = {}", selection.r);
    Ok(())
}

#[derive(Serialize)]
struct SpectraReport {
    kolmogorov: f64,
    lambda: f64,
    in_dense_regime: bool,
    matrix: MatrixArg,
    values_in_histogram: usize,
    theory_mass: f64,
}

pub fn cmd_spectra(args: &SpectraArgs) -> CliResult<()> {
    let mut a = merge(args, &args.config)?;
    let seed = *a.seed.get_or_insert(0);
    let path_file = input_file(&a.path, "path")?;
    let matrix = *a.matrix.get_or_insert(MatrixArg::Laplacian);
    let bins = *a.bins.get_or_insert(60);
    let pieces = *a.pieces.get_or_insert(1);
    let eta = *a.eta.get_or_insert(1e-6);
    let points = *a.points.get_or_insert(400);
    if pieces == 0 || bins == 0 || points == 0 {
        return Err(usage("--pieces, --bins and --points must be positive"));
    }
    let path = io::read_path(&path_file)?;
    let model = match &a.model {
        Some(f) => {
            let model = load_model(&input_file(&Some(f.clone()), "model")?, None)?;
            if model.n() != path.n() {
                return Err(usage(format!("model has {} states, path has {}", model.n(), path.n())));
            }
            model
        }
        None => {
            let m = required(&a.m, "m (or --model)")?;
            let counts = frequency_matrix(&path)?;
            let assignment = cluster_pipeline(&counts, path.len(), m, 10, derive_seed(seed, 0))?;
            let params = estimate_params(&counts, path.len(), &assignment)?;
            ClusterModel::new(m, assignment.labels().to_vec(), params.p_hat)?
        }
    };
    a.m = Some(model.m());
    let drop_leading = *a.drop_leading.get_or_insert(model.m());
    let per = path.len() / pieces;
    if per < 2 {
        return Err(CliError::Run(BmcError::PathTooShort { len: path.len(), min: 2 * pieces }));
    }
    let (est_lambda, in_regime) = estimate_lambda(per, path.n());
    let lambda = *a.lambda.get_or_insert(est_lambda);
    let dir = prepare_out(&a.out)?;
    let kind: MatrixKind = matrix.into();
    let bulks = (0..pieces)
        .map(|k| {
            let piece = path.slice(k * per, (k + 1) * per)?;
            bulk_values(&path_singular_values(&piece, kind)?, kind.scaling(), drop_leading)
        })
        .collect::<Result<Vec<_>>>()?;
    let histogram = average_histograms(&bulks, bins)?;
    let profile = match kind {
        MatrixKind::Laplacian => laplacian_profile(&model, lambda)?,
        MatrixKind::Frequency => frequency_profile(&model, lambda)?,
    };
    let theory = limiting_density(&profile, &default_grid(&profile, points), eta)?;
    let report = SpectraReport {
        kolmogorov: compare_density(&histogram, &theory),
        lambda,
        in_dense_regime: in_regime,
        matrix,
        values_in_histogram: bulks.iter().map(Vec::len).sum(),
        theory_mass: theory.mass(),
    };
    write_checked(&dir.join("histogram.csv"), &io::density_to_csv(&histogram))?;
    write_checked(&dir.join("theory.csv"), &io::density_to_csv(&theory))?;
    write_checked(&dir.join("comparison.json"), &io::to_json(&report)?)?;
    echo_config(&dir, "spectra", &a)
}

pub fn cmd_ingest(args: &IngestArgs) -> CliResult<()> {
    let mut a = merge(args, &args.config)?;
    a.seed.get_or_insert(0);
    let kind = required(&a.kind, "kind")?;
    let input = input_file(&a.input, "input")?;
    let file = || fs::File::open(&input).map_err(BmcError::from);
    let dir = prepare_out(&a.out)?;
    let path = match kind {
        IngestKind::Tokens => {
            let min_count = *a.min_count.get_or_insert(1);
            let drop_top = *a.drop_top.get_or_insert(0);
            let path = tokenize(&io::tokens_from_reader(file()?)?, min_count, drop_top)?;
            let vocab = path.vocabulary().expect("tokenize attaches a vocabulary");
            write_checked(&dir.join("vocabulary.json"), &io::to_json(vocab.symbols())?)?;
            path
        }
        IngestKind::Gps => {
            let cell_km = required(&a.cell_km, "cell-km")?;
            let cosine = *a.cosine.get_or_insert(CosineArg::Listing);
            let bbox = match &a.bbox {
                Some(b) if b.len() == 4 => Some(BoundingBox { lat_min: b[0], lat_max: b[1], lon_min: b[2], lon_max: b[3] }),
                Some(_) => return Err(usage("--bbox needs lat_min,lat_max,lon_min,lon_max")),
                None => None,
            };
            let mut records = io::gps_from_reader(file()?)?;
            if *a.sort_by_time.get_or_insert(false) {
                sort_by_timestamp(&mut records);
            }
            let (path, registry) = gps_to_states(&records, cell_km, bbox.as_ref(), cosine.into())?;
            let mut registry_json = registry.to_json()?;
            registry_json.push('\n');
            write_checked(&dir.join("registry.json"), &registry_json)?;
            path
        }
        IngestKind::Cfidf => {
            let assignment: ClusterAssignment = io::read_json(&input_file(&a.assignment, "assignment")?)?;
            let symbols: Vec<String> = io::read_json(&input_file(&a.vocabulary, "vocabulary")?)?;
            let vocabulary = Vocabulary::new(symbols)?;
            let corpus = io::corpus_from_reader(file()?)?;
            let vectors = cfidf_vectors(&corpus, &assignment, &vocabulary)?;
            let mut text = (0..assignment.m()).map(|k| format!("cf_idf_{k}")).collect::<Vec<_>>().join(",");
            text.push('\n');
            for v in &vectors {
                text.push_str(&v.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
                text.push('\n');
            }
            write_checked(&dir.join("cfidf.csv"), &text)?;
            return echo_config(&dir, "ingest", &a);
        }
    };
    let path = if *a.remove_self_jumps.get_or_insert(false) { remove_self_jumps(&path) } else { path };
    write_checked(&dir.join("path.csv"), &io::path_to_csv(&path))?;
    echo_config(&dir, "ingest", &a)
}

pub fn cmd_experiment(args: &ExperimentArgs) -> CliResult<()> {
    let mut a = merge(args, &args.config)?;
    let seed = *a.seed.get_or_insert(0);
    let kind = required(&a.kind, "kind")?;
    let iterations = *a.iterations.get_or_insert(10);
    match kind {
        ExperimentKind::Robustness => {
            let model = load_model(&input_file(&a.model, "model")?, a.n)?;
            a.n = Some(model.n());
            let spec = parse_perturb(a.perturb.get_or_insert_with(|| "kind=heavy_tailed,s=1.5".into()), seed, 1)?;
            a.perturb = Some(spec.to_string());
            let epsilons = a.epsilons.get_or_insert_with(|| vec![0.0, 0.05, 0.1, 0.2, 0.3]).clone();
            let seeds = *a.seeds.get_or_insert(10);
            let length = a.length.get_or_insert(Length::Auto).resolve(model.n());
            a.length = Some(Length::Fixed(length));
            let dir = prepare_out(&a.out)?;
            let rows =
                robustness_experiment(&model, &spec, &epsilons, seeds, Some(length), iterations, derive_seed(seed, 0))?;
            write_checked(&dir.join("robustness.csv"), &io::robustness_to_csv(&rows))?;
            echo_config(&dir, "experiment", &a)
        }
        ExperimentKind::RiskCurve => {
            let model = load_model(&input_file(&a.model, "model")?, a.n)?;
            a.n = Some(model.n());
            let spec = parse_perturb(a.perturb.get_or_insert_with(|| "kind=heavy_tailed,s=1.5".into()), seed, 1)?;
            a.perturb = Some(spec.to_string());
            let epsilons = a.epsilons.get_or_insert_with(|| vec![0.05]).clone();
            let lengths = a.lengths.get_or_insert_with(|| vec![10_000, 100_000, 1_000_000]).clone();
            let seeds = *a.seeds.get_or_insert(10);
            let dir = prepare_out(&a.out)?;
            let delta = make_perturbation(&spec, model.n())?;
            let mut text = String::from("epsilon,");
            let mut header_done = false;
            for (k, &eps) in epsilons.iter().enumerate() {
                let rows = risk_curve_experiment(&model, &delta, eps, &lengths, seeds, iterations, derive_seed(seed, 2 + k as u64))?;
                let table = io::risk_to_csv(&rows);
                let mut lines = table.lines();
                let header = lines.next().expect("table has a header");
                if !header_done {
                    text.push_str(header);
                    text.push('\n');
                    header_done = true;
                }
                for line in lines {
                    text.push_str(&format!("{eps},{line}\n"));
                }
            }
            write_checked(&dir.join("risk_curve.csv"), &text)?;
            echo_config(&dir, "experiment", &a)
        }
        ExperimentKind::OrderError => {
            let base_path = io::read_path(&input_file(&a.path, "path")?)?;
            let assignment: ClusterAssignment = io::read_json(&input_file(&a.assignment, "assignment")?)?;
            let epsilons = a.epsilons.get_or_insert_with(|| vec![0.0, 0.05, 0.1, 0.2, 0.3]).clone();
            let repetitions = *a.repetitions.get_or_insert(30);
            let zipf_s = *a.zipf_s.get_or_insert(1.5);
            let length = match a.length.get_or_insert(Length::Fixed(base_path.len())) {
                Length::Auto => default_length(base_path.n()),
                Length::Fixed(l) => *l,
            };
            a.length = Some(Length::Fixed(length));
            let dir = prepare_out(&a.out)?;
            let base = OrderBaseModels::fit(&base_path)?;
            let rows =
                order_error_experiment(&base, &assignment, &epsilons, repetitions, length, zipf_s, derive_seed(seed, 0))?;
            write_checked(&dir.join("order_error.csv"), &io::order_error_to_csv(&rows))?;
            echo_config(&dir, "experiment", &a)
        }
    }
}

/// Applies `BMCKIT_THREADS` to the global thread pool, once per process.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // A second call finds the pool already built, which is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::EvaluateKl(a) => cmd_evaluate_kl(a),
        Command::SelectOrder(a) => cmd_select_order(a),
        Command::Spectra(a) => cmd_spectra(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}
