use proptest::prelude::*;
use sfpe_core::models::{build, ModelConfig};
use sfpe_core::rng::Purpose;
use sfpe_core::solver::{
    initial_pools, iterate, noise_floor, pool_distance, solve, wasserstein_1d, wasserstein_1d_general, Init, SamplePool,
    SolverConfig,
};
use sfpe_core::{stats, SeedTree};

fn sorted(v: &[f64]) -> Vec<f64> {
    stats::sorted_copy(v)
}

fn brute(a: &[f64], b: &[f64]) -> f64 {
    // optimal coupling by enumeration, p = 1
    fn go(k: usize, perm: &mut Vec<usize>, a: &[f64], b: &[f64], best: &mut f64) {
        if k == perm.len() {
            *best = best.min(perm.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum());
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            go(k + 1, perm, a, b, best);
            perm.swap(k, i);
        }
    }
    let mut best = f64::INFINITY;
    go(0, &mut (0..a.len()).collect(), a, b, &mut best);
    best / a.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn wasserstein_is_a_metric(
        (a, b, c) in (1usize..7).prop_flat_map(|n| (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )),
        p in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0]),
    ) {
        let (a, b, c) = (sorted(&a), sorted(&b), sorted(&c));
        let ab = wasserstein_1d(&a, &b, p).unwrap();
        let ba = wasserstein_1d(&b, &a, p).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(wasserstein_1d(&a, &a, p).unwrap(), 0.0);
        let ac = wasserstein_1d(&a, &c, p).unwrap();
        let cb = wasserstein_1d(&c, &b, p).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert!((wasserstein_1d_general(&a, &b, p).unwrap() - ab).abs() <= 1e-12 * (1.0 + ab));
        if p == 1.0 {
            prop_assert!((ab - brute(&a, &b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn general_distance_handles_unequal_sizes(
        a in prop::collection::vec(-5.0f64..5.0, 1..40),
        b in prop::collection::vec(-5.0f64..5.0, 1..40),
    ) {
        let (a, b) = (sorted(&a), sorted(&b));
        let ab = wasserstein_1d_general(&a, &b, 1.0).unwrap();
        prop_assert!((ab - wasserstein_1d_general(&b, &a, 1.0).unwrap()).abs() <= 1e-12);
        // replicating each sample to a common size leaves the distance unchanged
        let ra: Vec<f64> = a.iter().flat_map(|x| std::iter::repeat_n(*x, b.len())).collect();
        let rb: Vec<f64> = b.iter().flat_map(|x| std::iter::repeat_n(*x, a.len())).collect();
        prop_assert!((wasserstein_1d(&ra, &rb, 1.0).unwrap() - ab).abs() <= 1e-10);
    }
}

#[test]
fn unequal_sizes_are_rejected() {
    assert!(wasserstein_1d(&[0.0], &[0.0, 1.0], 1.0).is_err());
    assert!(wasserstein_1d(&[0.0], &[1.0], 0.5).is_err());
}

#[test]
fn identity_system_preserves_mean_and_variance() {
    let identity = ModelConfig::from_json(
        r#"{"model": "custom", "name": "identity", "d": 1,
            "equations": [{"index_map": [0], "outcomes": [{"prob": 1.0, "matrices": [[[1.0]]], "shift": [0.0]}]}]}"#,
    )
    .unwrap();
    let sys = build(&identity).unwrap();
    let seeds = SeedTree::new(4);
    let n = 50_000;
    let start = initial_pools(&sys, n, Init::Gaussian { scale: 1.0 }, &seeds).unwrap();
    let (m0, v0) = (stats::mean(start[0].values()), stats::variance(start[0].values()));
    let mut pools = start;
    for g in 0..5 {
        pools = iterate(&sys, &pools, &SeedTree::new(100 + g)).unwrap().pools;
    }
    let (m1, v1) = (stats::mean(pools[0].values()), stats::variance(pools[0].values()));
    // five resampling steps add at most 5 v0 / n to the variance of the mean
    let se_mean = (6.0 * v0 / n as f64).sqrt();
    let se_var = (6.0 * 2.0 * v0 * v0 / n as f64).sqrt();
    assert!((m1 - m0).abs() <= 4.0 * se_mean, "{m0} -> {m1}");
    assert!((v1 - v0).abs() <= 4.0 * se_var, "{v0} -> {v1}");
}

#[test]
fn solve_is_deterministic_and_ends_near_noise_floor() {
    let sys = build(&ModelConfig::Quicksort {}).unwrap();
    let cfg = SolverConfig { pool_size: 50_000, ..Default::default() };
    let (a, diag) = solve(&sys, &cfg, 5).unwrap();
    let (b, _) = solve(&sys, &cfg, 5).unwrap();
    assert_eq!(a, b);
    let floor = noise_floor(&a[0], cfg.p, cfg.directions, &SeedTree::new(9)).unwrap();
    let last = diag.records.last().unwrap().distances[0];
    assert!(last <= 2.0 * floor, "last distance {last}, noise floor {floor}");
    let (c, _) = solve(&sys, &cfg, 6).unwrap();
    assert_ne!(a, c);
}

#[test]
fn sliced_distance_of_identical_pools_is_zero() {
    let p = SamplePool::new(2, (0..2000).map(|i| (i as f64).sin()).collect(), 0, Default::default()).unwrap();
    let mut rng = SeedTree::new(1).stream(Purpose::Distance, 0, 0);
    assert_eq!(pool_distance(&p, &p, 2.0, 16, &mut rng).unwrap(), 0.0);
}

#[test]
fn small_pools_are_rejected() {
    let sys = build(&ModelConfig::Quicksort {}).unwrap();
    assert!(solve(&sys, &SolverConfig { pool_size: 999, ..Default::default() }, 1).is_err());
}
