use bmckit::cluster::{estimate_params, ClusterAssignment};
use bmckit::counts::frequency_matrix;
use bmckit::model::{ClusterModel, StateKernel};
use bmckit::modelsel::{bmc_loglik, caic, kl_rate_diff, mle_order_model, select_order};
use bmckit::simulate::{sample_bmc, sample_mc, SamplePath, Start};
use proptest::prelude::*;

fn arb_kernel(n: usize) -> impl Strategy<Value = StateKernel> {
    prop::collection::vec(0.01f64..1.0, n * n).prop_map(move |w| {
        let rows: Vec<f64> = w
            .chunks(n)
            .flat_map(|r| {
                let t: f64 = r.iter().sum();
                r.iter().map(move |x| x / t).collect::<Vec<_>>()
            })
            .collect();
        StateKernel::new(n, rows).unwrap()
    })
}

fn arb_instance() -> impl Strategy<Value = (SamplePath, StateKernel, StateKernel)> {
    (2usize..=8)
        .prop_flat_map(|n| (Just(n), prop::collection::vec(0..n, 2..500), arb_kernel(n), arb_kernel(n)))
        .prop_map(|(n, s, p, q)| (SamplePath::new(n, s).unwrap(), p, q))
}

fn arb_path(max_m: usize) -> impl Strategy<Value = SamplePath> {
    (1usize..=max_m)
        .prop_flat_map(|m| (Just(m), prop::collection::vec(0..m, 10..400)))
        .prop_map(|(m, s)| SamplePath::new(m, s).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kl_path_equals_count_form((path, p, q) in arb_instance()) {
        let d = kl_rate_diff(&path, &p, &q).unwrap();
        let counts = frequency_matrix(&path).unwrap();
        let matrix: f64 = counts
            .entries()
            .iter()
            .map(|&(i, j, c)| c as f64 * (p.get(i, j).ln() - q.get(i, j).ln()))
            .sum::<f64>() / path.len() as f64;
        prop_assert!((d - matrix).abs() <= 1e-12 * (1.0 + d.abs()), "{} vs {}", d, matrix);
        prop_assert_eq!(kl_rate_diff(&path, &q, &p).unwrap(), -d);
    }

    #[test]
    fn bmc_loglik_path_equals_count_form(
        (path, _, _) in arb_instance(),
        weights in prop::collection::vec(0.01f64..1.0, 4),
    ) {
        let n = path.n();
        let sigma: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let p = vec![
            vec![weights[0] / (weights[0] + weights[1]), weights[1] / (weights[0] + weights[1])],
            vec![weights[2] / (weights[2] + weights[3]), weights[3] / (weights[2] + weights[3])],
        ];
        let model = ClusterModel::new(2, sigma, p).unwrap();
        let direct = bmc_loglik(&path, &model).unwrap();
        let counts = frequency_matrix(&path).unwrap();
        let matrix: f64 = counts.entries().iter().map(|&(i, j, c)| c as f64 * model.transition(i, j).ln()).sum();
        prop_assert!((direct - matrix).abs() <= 1e-12 * (1.0 + direct.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn estimated_p_maximizes_loglik(seed in any::<u64>(), pick in prop::collection::vec((0usize..3, 0usize..3, 0usize..3), 20)) {
        let truth = ClusterModel::balanced(12, vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.5, 0.3], vec![0.3, 0.2, 0.5]]).unwrap();
        let path = sample_bmc(&truth, 3_000, Start::Equilibrium, seed).unwrap();
        let assignment = ClusterAssignment::from_model(&truth);
        let counts = frequency_matrix(&path).unwrap();
        let p_hat = estimate_params(&counts, path.len(), &assignment).unwrap().p_hat;
        let fitted = ClusterModel::new(3, truth.sigma().to_vec(), p_hat.clone()).unwrap();
        let best = bmc_loglik(&path, &fitted).unwrap();
        for &(row, up, down) in &pick {
            if up == down || p_hat[row][down] < 1e-3 || p_hat[row][up] > 1.0 - 1e-3 {
                continue;
            }
            let mut p = p_hat.clone();
            p[row][up] += 1e-3;
            p[row][down] -= 1e-3;
            let other = ClusterModel::new(3, truth.sigma().to_vec(), p).unwrap();
            prop_assert!(bmc_loglik(&path, &other).unwrap() <= best);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fitted_order_rows_are_stochastic(path in arb_path(5), r in 0usize..=4) {
        let model = mle_order_model(&path, r).unwrap();
        for row in model.rows().values() {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn caic_grows_with_order_on_deterministic_paths() {
    let cycle = SamplePath::new(3, (0..600).map(|t| t % 3).collect()).unwrap();
    let values: Vec<f64> = (0..=4).map(|r| caic(&cycle, &mle_order_model(&cycle, r).unwrap()).unwrap()).collect();
    for r in 1..4 {
        assert!(values[r + 1] > values[r], "CAIC({}) = {} not above CAIC({r}) = {}", r + 1, values[r + 1], values[r]);
    }
    assert_eq!(select_order(&cycle, 4).unwrap().r, 1);
}

#[test]
fn constant_path_selects_order_zero() {
    let constant = SamplePath::new(1, vec![0; 50]).unwrap();
    let sel = select_order(&constant, 4).unwrap();
    assert!(sel.table.iter().all(|&(_, c)| c == 0.0));
    assert_eq!(sel.r, 0);
}

#[test]
fn iid_path_selects_order_zero() {
    let k = StateKernel::new(3, [0.5, 0.3, 0.2].repeat(3)).unwrap();
    let hits = (0..10)
        .filter(|&seed| select_order(&sample_mc(&k, 20_000, Start::Equilibrium, seed).unwrap(), 4).unwrap().r == 0)
        .count();
    assert!(hits >= 9, "{hits}/10");
}
