//! Acceptance report: one PASS/FAIL/SKIP line per criterion.
//!
//! Runs without the libtest harness so the lines come out in order. A FAIL
//! does not stop the rest of the workspace tests unless
//! `BMCKIT_ACCEPTANCE_STRICT=1`, in which case the process exits non-zero.

use std::collections::BTreeMap;
use std::fs;
use std::process::Command;
use std::time::Instant;

use bmckit::cluster::{
    cluster_pipeline, estimate_params, misclassification_exhaustive, misclassification_matching, misclassification_ratio,
    robustness_experiment, ClusterAssignment,
};
use bmckit::counts::{frequency_matrix, trim};
use bmckit::ingest::{gps_to_states, tokenize, CosineArgument, GpsRecord};
use bmckit::io;
use bmckit::model::{cluster_equilibrium, ClusterModel, StateKernel};
use bmckit::modelsel::{
    bmc_loglik, kernel_estimators, kl_confidence_halfwidth, kl_rate_diff, mixing_time, mle_order_model,
    order_error_experiment, risk_curve_experiment, select_order, OrderBaseModels,
};
use bmckit::rng::{derive_seed, stream_rng};
use bmckit::simulate::{
    default_length, make_perturbation, sample_bmc, sample_bmc0, sample_mc, PerturbationKind, PerturbationSpec, SamplePath,
    Start,
};
use bmckit::spectra::{
    average_histograms, bulk_values, compare_density, default_grid, laplacian_profile, limiting_density,
    path_singular_values, BlockVarianceProfile, MatrixKind,
};
use rand::Rng;
use rayon::prelude::*;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self { status: if ok { Status::Pass } else { Status::Fail }, detail }
    }
}

type Check = fn() -> bmckit::Result<Outcome>;

const SEED: u64 = 20_240_601;

fn three_cluster(n: usize) -> ClusterModel {
    ClusterModel::balanced(n, vec![vec![0.9, 0.1, 0.0], vec![0.0, 0.1, 0.9], vec![0.3, 0.7, 0.0]]).unwrap()
}

/// Two equal clusters with a weakly assortative cluster chain.
fn two_block(n: usize) -> ClusterModel {
    ClusterModel::balanced(n, vec![vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap()
}

fn heavy_tailed(seed: u64) -> PerturbationSpec {
    PerturbationSpec::new(PerturbationKind::HeavyTailed).with_seed(seed)
}

fn exact_recovery() -> bmckit::Result<Outcome> {
    let start = Instant::now();
    let model = three_cluster(300);
    let truth = ClusterAssignment::from_model(&model);
    let length = default_length(300);
    let errors: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(SEED, s);
            let path = sample_bmc(&model, length, Start::Equilibrium, seed)?;
            let counts = trim(&frequency_matrix(&path)?, 0)?;
            let est = cluster_pipeline(&counts, length, 3, 10, derive_seed(seed, 1))?;
            misclassification_ratio(&truth, &est)
        })
        .collect::<bmckit::Result<_>>()?;
    let secs = start.elapsed().as_secs_f64();
    let exact = errors.iter().filter(|&&e| e == 0.0).count();
    let mean = errors.iter().sum::<f64>() / 10.0;
    Ok(Outcome::check(
        exact >= 8 && mean <= 0.01 && secs <= 60.0,
        format!("l = {length}, E = 0 in {exact}/10, mean E = {mean:.4}, {secs:.1} s"),
    ))
}

fn robustness_curve() -> bmckit::Result<Outcome> {
    let start = Instant::now();
    let eps = [0.0, 0.05, 0.1, 0.2, 0.3];
    let rows = robustness_experiment(&two_block(200), &heavy_tailed(derive_seed(SEED, 2)), &eps, 10, None, 10, SEED)?;
    let secs = start.elapsed().as_secs_f64();
    let small = rows.iter().filter(|r| r.epsilon <= 0.05).all(|r| r.mean_e <= 0.05);
    let monotone = rows
        .windows(2)
        .all(|w| w[1].mean_e >= w[0].mean_e - 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt());
    let curve: Vec<String> = rows.iter().map(|r| format!("{}:{:.3}±{:.3}", r.epsilon, r.mean_e, r.stderr)).collect();
    Ok(Outcome::check(
        small && monotone && secs <= 300.0,
        format!("n = 200, m = 2, E by epsilon [{}], {secs:.1} s", curve.join(", ")),
    ))
}

fn risk_crossover() -> bmckit::Result<Outcome> {
    let start = Instant::now();
    let model = two_block(300);
    let delta = make_perturbation(&heavy_tailed(derive_seed(SEED, 3)), 300)?;
    let (short, long) = (50_000, 5_000_000);
    let rows = risk_curve_experiment(&model, &delta, 0.05, &[short, long], 10, 10, SEED)?;
    let secs = start.elapsed().as_secs_f64();
    let bmc_wins = rows.iter().filter(|r| r.length == short && r.r_bmc < r.r_emp).count();
    let emp_wins = rows.iter().filter(|r| r.length == long && r.r_emp < r.r_bmc).count();
    Ok(Outcome::check(
        bmc_wins >= 8 && emp_wins >= 8 && secs <= 600.0,
        format!("R_bmc < R_emp at l = {short} in {bmc_wins}/10, R_emp < R_bmc at l = {long} in {emp_wins}/10, {secs:.1} s"),
    ))
}

fn kl_machinery() -> bmckit::Result<Outcome> {
    let p = StateKernel::new(
        4,
        vec![0.4, 0.3, 0.2, 0.1, 0.1, 0.5, 0.2, 0.2, 0.25, 0.25, 0.25, 0.25, 0.3, 0.1, 0.1, 0.5],
    )?;
    let q = StateKernel::new(4, vec![0.25; 16])?;
    // sum_ij pi_i P_ij ln(P_ij / Q_ij), computed independently
    let exact = 0.133_866_730_849_432_37;
    let big = 1_000_000;
    let d_hat = kl_rate_diff(&sample_mc(&p, big, Start::Equilibrium, SEED)?, &p, &q)?;
    let point = (d_hat - exact).abs() <= 0.01;

    let tau = mixing_time(&p)?;
    let small = 10_000;
    let c_z = kl_confidence_halfwidth(&p, &q, small, tau, 0.05)?;
    let errors: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|s| Ok((kl_rate_diff(&sample_mc(&p, small, Start::Equilibrium, derive_seed(SEED, s))?, &p, &q)? - exact).abs()))
        .collect::<bmckit::Result<_>>()?;
    let covered = errors.iter().filter(|&&e| e <= c_z).count();
    // same bound with sqrt(l) in place of l, for reference only
    let wide = c_z * (small as f64).sqrt();
    let covered_wide = errors.iter().filter(|&&e| e <= wide).count();
    Ok(Outcome::check(
        point && covered >= 90,
        format!(
            "|D_hat - D| = {:.5} at l = {big}; tau_mix = {tau}, c_z = {c_z:.5}, coverage {covered}/100 at l = {small} \
             (sqrt(l) scaling would give {covered_wide}/100)",
            (d_hat - exact).abs()
        ),
    ))
}

fn order_selection() -> bmckit::Result<Outcome> {
    let start = Instant::now();
    let model = three_cluster(300);
    let truth = ClusterAssignment::from_model(&model);
    let length = 100_000;
    let eta = cluster_equilibrium(model.p())?;
    let picks: Vec<(usize, usize)> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(SEED, s);
            let first = sample_bmc(&model, length, Start::Equilibrium, seed)?.map_states(truth.labels(), 3)?;
            let zeroth = sample_bmc0(&eta, model.sizes(), length, derive_seed(seed, 1))?.map_states(truth.labels(), 3)?;
            Ok((select_order(&first, 4)?.r, select_order(&zeroth, 4)?.r))
        })
        .collect::<bmckit::Result<_>>()?;
    let first_ok = picks.iter().filter(|p| p.0 == 1).count();
    let zeroth_ok = picks.iter().filter(|p| p.1 == 0).count();

    let base = OrderBaseModels::fit(&sample_bmc(&model, length, Start::Equilibrium, derive_seed(SEED, 99))?)?;
    let row = &order_error_experiment(&base, &truth, &[0.0], 30, length, 1.5, SEED)?[0];
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome::check(
        first_ok >= 9 && zeroth_ok >= 9 && row.e_over <= 0.2 && row.e_under <= 0.2,
        format!(
            "r = 1 on first order in {first_ok}/10, r = 0 on zeroth order in {zeroth_ok}/10, \
             e_over = {:.3}, e_under = {:.3} (R = 30, eps = 0), {secs:.1} s",
            row.e_over, row.e_under
        ),
    ))
}

fn spectral_law() -> bmckit::Result<Outcome> {
    let start = Instant::now();
    let unit = BlockVarianceProfile::new(vec![vec![1.0]], vec![1.0])?;
    let grid: Vec<f64> = (0..=37).map(|k| 0.05 + 0.05 * k as f64).collect();
    let solved = limiting_density(&unit, &grid, 1e-6)?;
    let pointwise = grid
        .iter()
        .zip(&solved.density)
        .map(|(x, f)| (f - (4.0 - x * x).sqrt() / std::f64::consts::PI).abs())
        .fold(0.0, f64::max);

    let n = 1000;
    let model = three_cluster(n);
    let bulks: Vec<Vec<f64>> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let path = sample_bmc(&model, n * n, Start::Equilibrium, derive_seed(SEED, s))?;
            let kind = MatrixKind::Laplacian;
            bulk_values(&path_singular_values(&path, kind)?, kind.scaling(), 3)
        })
        .collect::<bmckit::Result<_>>()?;
    let hist = average_histograms(&bulks, 60)?;
    let profile = laplacian_profile(&model, 1.0)?;
    let theory = limiting_density(&profile, &default_grid(&profile, 400), 1e-6)?;
    let distance = compare_density(&hist, &theory);
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome::check(
        pointwise <= 1e-3 && distance <= 0.05 && secs <= 600.0,
        format!("quarter circle max error {pointwise:.2e}, Kolmogorov distance {distance:.4} at n = {n}, {secs:.1} s"),
    ))
}

fn random_kernel(rng: &mut impl Rng, n: usize) -> StateKernel {
    let mut w: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.01..1.0)).collect();
    for row in w.chunks_mut(n) {
        let t: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= t);
    }
    StateKernel::new(n, w).unwrap()
}

fn random_path(rng: &mut impl Rng, n: usize) -> SamplePath {
    let len = rng.random_range(2..500);
    SamplePath::new(n, (0..len).map(|_| rng.random_range(0..n)).collect()).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

fn row_sums_ok<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> bool {
    rows.into_iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-12)
}

fn identity_suite() -> bmckit::Result<Outcome> {
    let mut rng = stream_rng(SEED, 0);
    let mut failures: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fail = |name| *failures.entry(name).or_default() += 1;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let path = random_path(&mut rng, n);
        let counts = frequency_matrix(&path)?;
        let (p, q) = (random_kernel(&mut rng, n), random_kernel(&mut rng, n));

        let kl: f64 = counts.entries().iter().map(|&(i, j, c)| c as f64 * (p.get(i, j).ln() - q.get(i, j).ln())).sum::<f64>()
            / path.len() as f64;
        if !close(kl_rate_diff(&path, &p, &q)?, kl) {
            fail("kl_rate_diff");
        }

        let m = rng.random_range(1..=n.min(3));
        let mut sigma: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        sigma[..m].iter_mut().enumerate().for_each(|(k, s)| *s = k);
        let cluster_p = (0..m)
            .map(|_| {
                let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
                let t: f64 = w.iter().sum();
                w.iter().map(|x| x / t).collect()
            })
            .collect();
        let model = ClusterModel::new(m, sigma, cluster_p)?;
        let ll: f64 = counts.entries().iter().map(|&(i, j, c)| c as f64 * model.transition(i, j).ln()).sum();
        if !close(bmc_loglik(&path, &model)?, ll) {
            fail("bmc_loglik");
        }

        if counts.total() != path.len() as u64 - 1 {
            fail("total");
        }
        let (out, inn) = (counts.row_sums(), counts.col_sums());
        if out.iter().zip(&inn).map(|(a, b)| a.abs_diff(*b)).sum::<u64>() > 2 {
            fail("flow balance");
        }

        let assignment = ClusterAssignment::from_model(&model);
        if let Ok(params) = estimate_params(&counts, path.len(), &assignment) {
            if !row_sums_ok(params.p_hat.iter().map(Vec::as_slice)) {
                fail("p_hat rows");
            }
        }
        if let Ok(est) = kernel_estimators(&counts, &assignment) {
            for k in [&est.empirical, &est.bmc, &est.uniform] {
                if !row_sums_ok((0..n).map(|i| k.row(i)).filter(|r| r.iter().any(|&x| x > 0.0))) {
                    fail("kernel estimator rows");
                }
            }
        }
        let order = mle_order_model(&path, rng.random_range(0..=2))?;
        if !row_sums_ok(order.rows().values().map(Vec::as_slice)) {
            fail("order rows");
        }
    }
    for kind in [PerturbationKind::UniformStochastic, PerturbationKind::Degree0, PerturbationKind::HeavyTailed, PerturbationKind::Sparse] {
        let delta = make_perturbation(&PerturbationSpec::new(kind).with_seed(SEED), 50)?;
        if !row_sums_ok((0..50).map(|i| delta.row(i))) {
            fail("perturbation rows");
        }
    }
    for _ in 0..500 {
        let m = rng.random_range(1..=8);
        let n = rng.random_range(1..=40);
        let mut labels = || ClusterAssignment::new(m, (0..n).map(|_| rng.random_range(0..m)).collect());
        let (a, b) = (labels()?, labels()?);
        if misclassification_exhaustive(&a, &b)? != misclassification_matching(&a, &b)? {
            fail("misclassification");
        }
    }
    let failed: Vec<String> = failures.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    Ok(Outcome::check(
        failures.is_empty(),
        if failed.is_empty() { "1000 path instances, 500 assignment pairs".into() } else { failed.join(", ") },
    ))
}

fn gps_ingestion() -> bmckit::Result<Outcome> {
    let coords = [
        (40.4800, -94.1000),
        (40.4812, -94.0950),
        (40.4790, -94.0900),
        (40.4850, -94.0880),
        (40.4731, -94.1105),
        (40.4800, -94.1000),
        (40.4777, -94.0811),
        (40.4859, -94.1150),
        (40.4705, -94.0990),
        (40.4842, -94.1022),
    ];
    // floor(lat * 110.574 / x), floor(lon * 111.320 * |cos(j_lat * 110.574 / x degrees)| / x), computed independently
    let expected = [
        (4476, -3450),
        (4476, -3449),
        (4475, -10472),
        (4476, -3449),
        (4475, -10474),
        (4476, -3450),
        (4475, -10471),
        (4476, -3450),
        (4474, -3912),
        (4476, -3450),
    ];
    let records: Vec<GpsRecord> =
        coords.iter().enumerate().map(|(t, &(lat, lon))| GpsRecord { lat, lon, timestamp: t.to_string() }).collect();
    let (path, registry) = gps_to_states(&records, 1.0, None, CosineArgument::Listing)?;
    let cells: Vec<(i64, i64)> = path.symbols().iter().map(|&s| registry.cells()[s]).collect();
    let indices_ok = cells == expected && path.symbols() == [0, 1, 2, 1, 3, 0, 4, 0, 5, 0];

    let dir = tempfile::tempdir().map_err(bmckit::BmcError::from)?;
    let input = dir.path().join("trace.csv");
    let mut text = String::from("lat,lon,timestamp\n");
    records.iter().for_each(|r| text.push_str(&format!("{},{},{}\n", r.lat, r.lon, r.timestamp)));
    fs::write(&input, text).map_err(bmckit::BmcError::from)?;
    let run = |name: &str| -> Option<(Vec<u8>, Vec<u8>)> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_bmckit"))
            .args(["ingest", "--kind", "gps", "--cell-km", "1", "--input"])
            .arg(&input)
            .arg("--out")
            .arg(&out)
            .status()
            .ok()?;
        if !status.success() {
            return None;
        }
        Some((fs::read(out.join("path.csv")).ok()?, fs::read(out.join("registry.json")).ok()?))
    };
    let (a, b) = (run("a"), run("b"));
    let stable = a.is_some() && a == b;
    Ok(Outcome::check(
        indices_ok && stable,
        format!("cells match: {indices_ok}, path and registry byte-stable: {stable}, {} cells", registry.len()),
    ))
}

/// Ticker with the highest open-to-close return on each date, in date order.
/// Expects `date,ticker,open,close` rows.
fn top_daily_returns(file: &str) -> bmckit::Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(file).map_err(|e| bmckit::BmcError::Parse(e.to_string()))?;
    let mut best: BTreeMap<String, (f64, String)> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| bmckit::BmcError::Parse(e.to_string()))?;
        let num = |k: usize| row.get(k).and_then(|v| v.parse::<f64>().ok());
        let (Some(open), Some(close)) = (num(2), num(3)) else { continue };
        if open <= 0.0 {
            continue;
        }
        let ret = (close - open) / open;
        let (date, ticker) = (row[0].to_string(), row[1].to_string());
        let entry = best.entry(date).or_insert((f64::NEG_INFINITY, String::new()));
        if ret > entry.0 || (ret == entry.0 && ticker < entry.1) {
            *entry = (ret, ticker);
        }
    }
    Ok(best.into_values().map(|v| v.1).collect())
}

fn datasets() -> bmckit::Result<Outcome> {
    let sp = std::env::var("BMCKIT_SP500_PATH").ok();
    let codon = std::env::var("BMCKIT_CODON_PATH").ok();
    if sp.is_none() && codon.is_none() {
        return Ok(Outcome { status: Status::Skip, detail: "BMCKIT_SP500_PATH and BMCKIT_CODON_PATH unset".into() });
    }
    let mut ok = true;
    let mut notes = Vec::new();
    if let Some(file) = sp {
        let path = tokenize(&top_daily_returns(&file)?, 1, 0)?;
        let counts = frequency_matrix(&path)?;
        let assignment = cluster_pipeline(&counts, path.len(), 3, 10, SEED)?;
        let params = estimate_params(&counts, path.len(), &assignment)?;
        let mass: f64 = params.pi_hat.iter().sum();
        let deviation = params
            .p_hat
            .iter()
            .flat_map(|row| row.iter().zip(&params.pi_hat).map(move |(p, pi)| (p - pi / mass).abs()))
            .fold(0.0, f64::max);
        ok &= deviation <= 0.1;
        notes.push(format!("S&P: {} days, max |p_hat - pi_hat| = {deviation:.3}", path.len()));
    }
    if let Some(file) = codon {
        let text = fs::read_to_string(&file).map_err(bmckit::BmcError::from)?;
        let bases: Vec<char> = text.chars().map(|c| c.to_ascii_uppercase()).filter(|c| "ACGT".contains(*c)).collect();
        let codons: Vec<String> = bases.chunks_exact(3).map(|c| c.iter().collect()).collect();
        let path = tokenize(&codons, 1, 0)?;
        let counts = frequency_matrix(&path)?;
        let m = 5.min(path.n());
        let assignment = cluster_pipeline(&counts, path.len(), m, 10, SEED)?;
        let selection = select_order(&path.map_states(assignment.labels(), m)?, 4)?;
        let out = std::env::temp_dir().join("bmckit_codon_caic.csv");
        fs::write(&out, io::caic_to_csv(&selection)).map_err(bmckit::BmcError::from)?;
        ok &= selection.table.len() == 5;
        notes.push(format!("codons: {} symbols, r = {}, table in {}", path.len(), selection.r, out.display()));
    }
    Ok(Outcome::check(ok, notes.join("; ")))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("exact recovery", exact_recovery),
        ("robustness curve", robustness_curve),
        ("risk crossover", risk_crossover),
        ("KL machinery", kl_machinery),
        ("order selection", order_selection),
        ("spectral law", spectral_law),
        ("identity suite", identity_suite),
        ("GPS ingestion", gps_ingestion),
        ("datasets", datasets),
    ];
    let (mut passed, mut failed, mut skipped) = (0, 0, 0);
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = check().unwrap_or_else(|e| Outcome { status: Status::Fail, detail: format!("error: {e}") });
        let label = match outcome.status {
            Status::Pass => {
                passed += 1;
                "PASS"
            }
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => {
                skipped += 1;
                "SKIP"
            }
        };
        println!("{label} {} {name}: {}", k + 1, outcome.detail);
    }
    println!("acceptance: {passed} passed, {failed} failed, {skipped} skipped");
    if failed > 0 && std::env::var("BMCKIT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
