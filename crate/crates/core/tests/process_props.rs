use proptest::prelude::*;
use sfpe_core::process::{
    polya, rrt_pathlen, run, scaled_batch, simulate_batch, tree_pathlen_wiener, Centering, ProcessModel, Replacement,
    SplitTree, SplitTreeParams,
};
use sfpe_core::models::SplitLaw;
use sfpe_core::rng::Purpose;
use sfpe_core::{stats, SeedTree};

const QUICKSORT_VARIANCE: f64 = 0.420_263_732_607_094_4;

#[test]
fn quicksort_batch_variance() {
    let pool = scaled_batch(&ProcessModel::QuicksortCmp {}, 10_000, 10_000, Centering::BatchMean, &SeedTree::new(2)).unwrap();
    let var = stats::variance(pool.values());
    assert!((var - QUICKSORT_VARIANCE).abs() <= 0.1 * QUICKSORT_VARIANCE, "{var}");
}

#[test]
fn quicksort_single_key() {
    let mut rng = SeedTree::new(1).stream(Purpose::Simulate, 0, 0);
    let r = run(&ProcessModel::QuicksortCmp {}, 1, &mut rng).unwrap();
    assert_eq!(r.statistic, vec![0.0]);
    assert_eq!(r.scaled, Some(vec![0.0]));
}

#[test]
fn exchanges_stay_below_comparisons() {
    let raw = simulate_batch(&ProcessModel::QuicksortCmpXch {}, 500, 200, &SeedTree::new(3)).unwrap();
    for r in raw {
        assert!(r[1] <= r[0] && r[1] >= 0.0 && r[0].fract() == 0.0 && r[1].fract() == 0.0);
    }
}

#[test]
fn three_node_paths() {
    assert_eq!(tree_pathlen_wiener(&[0, 0, 1]), (3, 4));
    assert_eq!(tree_pathlen_wiener(&[0, 0, 0]), (2, 4));
    assert_eq!(tree_pathlen_wiener(&[0]), (0, 0));
}

#[test]
fn bst_wiener_matches_node_formula() {
    // with one ball per node the ball-based indices equal the node-based ones
    let seeds = SeedTree::new(4);
    for i in 0..20 {
        let mut rng = seeds.stream(Purpose::Simulate, 9, i);
        let t = SplitTree::grow(&SplitTreeParams::default(), 60, &mut rng);
        let keep: Vec<usize> = (0..t.len()).filter(|&u| t.balls[u] == 1).collect();
        let index: std::collections::HashMap<usize, usize> = keep.iter().enumerate().map(|(k, &u)| (u, k)).collect();
        let parents: Vec<usize> = keep.iter().map(|&u| if u == 0 { 0 } else { index[&t.parent[u]] }).collect();
        assert_eq!(tree_pathlen_wiener(&parents), (t.path_length(), t.wiener_index()));
    }
}

#[test]
fn invalid_processes_are_config_errors() {
    let bad = ProcessModel::Polya { replacement: Replacement::Bernoulli { p1: 1.5, p2: 0.5 }, init: vec![1, 0], exponent: None };
    assert!(simulate_batch(&bad, 10, 10, &SeedTree::new(1)).is_err());
    let bad = ProcessModel::SplitPathlen { params: SplitTreeParams { b: 2, s: 2, s0: 2, s1: 1, law: SplitLaw::Uniform } };
    assert!(bad.validate().is_err());
    assert!(scaled_batch(&ProcessModel::RrtPathlen {}, 10, 999, Centering::Auto, &SeedTree::new(1)).is_err());
    assert!(scaled_batch(&ProcessModel::default_for("split").unwrap(), 10, 1000, Centering::Exact, &SeedTree::new(1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn balanced_urns_grow_by_s(a in 1u32..6, b in 0u32..6, c in 0u32..6, n in 0usize..300, seed in any::<u64>()) {
        prop_assume!(a + b >= c && a + b > 0);
        let d = a + b - c;
        prop_assume!(c + d > 0);
        let mut rng = SeedTree::new(seed).stream(Purpose::Simulate, 0, 0);
        let rule = Replacement::Deterministic { matrix: vec![vec![a, b], vec![c, d]] };
        let comp = polya(&rule, &[1, 2], n, &mut rng);
        prop_assert_eq!(comp.iter().sum::<u64>(), 3 + n as u64 * (a + b) as u64);
        let comp = polya(&Replacement::Bernoulli { p1: 0.8, p2: 0.9 }, &[0, 1], n, &mut rng);
        prop_assert_eq!(comp.iter().sum::<u64>(), 1 + n as u64);
    }

    #[test]
    fn path_length_bounds(n in 1usize..300, seed in any::<u64>()) {
        let mut rng = SeedTree::new(seed).stream(Purpose::Simulate, 0, 0);
        let upsilon = rrt_pathlen(n, &mut rng);
        prop_assert!(upsilon <= (n * (n - 1) / 2) as u64);
        let params = SplitTreeParams { b: 3, s: 4, s0: 1, s1: 1, law: SplitLaw::Dirichlet { alpha: 0.5 } };
        let t = SplitTree::grow(&params, n, &mut rng);
        prop_assert_eq!(t.balls.iter().sum::<u64>(), n as u64);
        prop_assert!(t.path_length() <= (n * (n - 1) / 2) as u64);
        prop_assert!(t.balls.iter().all(|&k| k <= 4));
    }
}

#[test]
fn batches_are_reproducible() {
    let m = ProcessModel::default_for("urn_rand").unwrap();
    let a = scaled_batch(&m, 200, 1000, Centering::Auto, &SeedTree::new(12)).unwrap();
    let b = scaled_batch(&m, 200, 1000, Centering::Auto, &SeedTree::new(12)).unwrap();
    assert_eq!(a, b);
    assert!((stats::mean(a.values())).abs() < 1e-12);
}
