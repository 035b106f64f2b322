use bmckit::cluster::{
    estimate_params, improve, misclassification_exhaustive, misclassification_matching, spectral_cluster,
    ClusterAssignment,
};
use bmckit::counts::{frequency_matrix, CountMatrix};
use bmckit::kmeans::KMeansConfig;
use bmckit::model::ClusterModel;
use bmckit::simulate::{sample_bmc, SamplePath, Start};
use proptest::prelude::*;

fn three_cluster(n: usize) -> ClusterModel {
    ClusterModel::balanced(n, vec![vec![0.9, 0.1, 0.0], vec![0.0, 0.1, 0.9], vec![0.3, 0.7, 0.0]]).unwrap()
}

fn arb_pair() -> impl Strategy<Value = (ClusterAssignment, ClusterAssignment)> {
    (1usize..=8)
        .prop_flat_map(|m| (Just(m), 1usize..=40))
        .prop_flat_map(|(m, n)| (Just(m), prop::collection::vec(0..m, n), prop::collection::vec(0..m, n)))
        .prop_map(|(m, a, b)| (ClusterAssignment::new(m, a).unwrap(), ClusterAssignment::new(m, b).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn exhaustive_and_matching_agree((truth, est) in arb_pair()) {
        let a = misclassification_exhaustive(&truth, &est).unwrap();
        let b = misclassification_matching(&truth, &est).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(misclassification_exhaustive(&truth, &truth).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn spectral_clustering_ignores_state_order(
        perm in Just((0..90usize).collect::<Vec<_>>()).prop_shuffle(),
        seed in 0u64..1000,
    ) {
        let model = three_cluster(90);
        let path = sample_bmc(&model, 60_000, Start::Equilibrium, seed).unwrap();
        let counts = frequency_matrix(&path).unwrap();
        let permuted = CountMatrix::from_triplets(90, counts.entries().iter().map(|&(i, j, c)| (perm[i], perm[j], c))).unwrap();
        let cfg = KMeansConfig::default();
        let a = spectral_cluster(&counts, 3, &cfg, seed).unwrap();
        let b = spectral_cluster(&permuted, 3, &cfg, seed).unwrap();
        let back = ClusterAssignment::new(3, (0..90).map(|i| b.labels()[perm[i]]).collect()).unwrap();
        prop_assert_eq!(misclassification_exhaustive(&a, &back).unwrap(), 0.0);
    }

    #[test]
    fn improve_is_repeatable(seed in any::<u64>(), m in 1usize..4) {
        let n = 24;
        // uniform cluster dynamics: every candidate cluster scores the same
        let model = ClusterModel::balanced(n, vec![vec![1.0 / m as f64; m]; m]).unwrap();
        let path = sample_bmc(&model, 2_000, Start::Equilibrium, seed).unwrap();
        let counts = frequency_matrix(&path).unwrap();
        let start = ClusterAssignment::from_model(&model);
        let a = improve(&counts, path.len(), &start).unwrap();
        let b = improve(&counts, path.len(), &start).unwrap();
        prop_assert_eq!(a.labels(), b.labels());
    }
}

fn arb_path_and_assignment() -> impl Strategy<Value = (SamplePath, ClusterAssignment)> {
    (2usize..=5)
        .prop_flat_map(|m| (Just(m), m..=15))
        .prop_flat_map(|(m, n)| (Just(m), Just(n), prop::collection::vec(0..n, 2..400), prop::collection::vec(0..m, n)))
        .prop_map(|(m, n, symbols, mut labels)| {
            for (k, l) in labels.iter_mut().take(m).enumerate() {
                *l = k;
            }
            (SamplePath::new(n, symbols).unwrap(), ClusterAssignment::new(m, labels).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn estimated_rows_and_mass((path, assignment) in arb_path_and_assignment()) {
        let counts = frequency_matrix(&path).unwrap();
        let len = path.len();
        match estimate_params(&counts, len, &assignment) {
            Ok(params) => {
                for row in &params.p_hat {
                    let s: f64 = row.iter().sum();
                    prop_assert!((s - 1.0).abs() <= 1e-12);
                }
                // each pi_hat is an integer count over l; together they hold l - 1 transitions
                let counts_back: f64 = params.pi_hat.iter().map(|p| (p * len as f64).round()).sum();
                prop_assert_eq!(counts_back as usize, len - 1);
                let total: f64 = params.pi_hat.iter().sum();
                prop_assert!((total - (len - 1) as f64 / len as f64).abs() <= 1e-15);
            }
            Err(e) => prop_assert!(matches!(e, bmckit::BmcError::ZeroMassCluster(_))),
        }
    }
}
