use bmckit::cluster::robustness_experiment;
use bmckit::model::{state_kernel_of, ClusterModel, Distribution};
use bmckit::simulate::{
    make_perturbation, sample_bmc, sample_bmc0, sample_perturbed_bmc, PerturbationKind, PerturbationSpec, Start,
};
use proptest::prelude::*;

fn three_cluster(n: usize) -> ClusterModel {
    ClusterModel::balanced(n, vec![vec![0.9, 0.1, 0.0], vec![0.0, 0.1, 0.9], vec![0.3, 0.7, 0.0]]).unwrap()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn paths_do_not_depend_on_thread_count() {
    let model = three_cluster(30);
    let a = in_pool(1, || sample_bmc(&model, 5_000, Start::Equilibrium, 11).unwrap());
    let b = in_pool(4, || sample_bmc(&model, 5_000, Start::Equilibrium, 11).unwrap());
    assert_eq!(a, b);
    let spec = PerturbationSpec::new(PerturbationKind::HeavyTailed).with_seed(3);
    let run = || robustness_experiment(&model, &spec, &[0.0, 0.2], 3, Some(4_000), 2, 5).unwrap();
    assert_eq!(in_pool(1, run), in_pool(4, run));
}

/// Pearson statistic of the contingency table of non-overlapping pairs.
fn independence_statistic(symbols: &[usize], m: usize) -> f64 {
    let mut table = vec![vec![0.0; m]; m];
    for pair in symbols.chunks_exact(2) {
        table[pair[0]][pair[1]] += 1.0;
    }
    let total: f64 = table.iter().flatten().sum();
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..m).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut chi2 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let expected = rows[i] * cols[j] / total;
            chi2 += (table[i][j] - expected).powi(2) / expected;
        }
    }
    chi2
}

#[test]
fn zeroth_order_symbols_are_independent() {
    // 99th percentile of chi-square with (3-1)(3-1) = 4 degrees of freedom
    const CRITICAL: f64 = 13.276_704_135_987_6;
    let eta = Distribution::new(vec![0.5, 0.3, 0.2]).unwrap();
    let passed = (0..100)
        .filter(|&seed| {
            let path = sample_bmc0(&eta, &[1, 1, 1], 100_000, seed).unwrap();
            independence_statistic(path.symbols(), 3) < CRITICAL
        })
        .count();
    assert!(passed >= 95, "only {passed}/100 runs passed");
}

#[test]
fn half_mixture_with_own_kernel_is_the_plain_chain() {
    let model = three_cluster(6);
    let kernel = state_kernel_of(&model);
    let path = sample_perturbed_bmc(&model, &kernel, 0.5, 1_000_000, Start::Equilibrium, 21).unwrap();
    let n = model.n();
    let mut counts = vec![0.0; n * n];
    for w in path.symbols().windows(2) {
        counts[w[0] * n + w[1]] += 1.0;
    }
    for i in 0..n {
        let row = &counts[i * n..(i + 1) * n];
        let total: f64 = row.iter().sum();
        for (j, c) in row.iter().enumerate() {
            let freq = c / total;
            assert!((freq - kernel.get(i, j)).abs() <= 0.01, "({i},{j}): {freq} vs {}", kernel.get(i, j));
        }
    }
}

fn arb_kind() -> impl Strategy<Value = PerturbationKind> {
    prop_oneof![
        Just(PerturbationKind::UniformStochastic),
        Just(PerturbationKind::Degree0),
        Just(PerturbationKind::HeavyTailed),
        Just(PerturbationKind::Sparse),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn perturbations_are_stochastic(kind in arb_kind(), n in 2usize..=200, seed in any::<u64>()) {
        let delta = make_perturbation(&PerturbationSpec::new(kind).with_seed(seed), n).unwrap();
        for i in 0..n {
            let row = delta.row(i);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "{} row {} sums to {}", kind, i, s);
        }
    }

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), eps in 0.0f64..=1.0) {
        let model = three_cluster(12);
        let delta = make_perturbation(&PerturbationSpec::new(PerturbationKind::Sparse).with_seed(seed), 12).unwrap();
        let a = sample_perturbed_bmc(&model, &delta, eps, 500, Start::Equilibrium, seed).unwrap();
        let b = sample_perturbed_bmc(&model, &delta, eps, 500, Start::Equilibrium, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
