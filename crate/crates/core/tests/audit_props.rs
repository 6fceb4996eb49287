use proptest::prelude::*;
use rand::Rng;
use sfpe_core::audit::{
    audit_coefficients, audit_draws, audit_support, chi, chi_bootstrap, collect_draw_stats, AuditConfig, Verdict,
};
use sfpe_core::models::{build, ModelConfig, SplitLaw};
use sfpe_core::rng::Purpose;
use sfpe_core::solver::{SamplePool, SeedLineage};
use sfpe_core::SeedTree;

proptest! {
    #[test]
    fn chi_trace_increments(eta0 in 0.01f64..5.0, nu in 0.01f64..5.0, target in 0.1f64..20.0) {
        let t = chi_bootstrap(eta0, nu, target).unwrap();
        for w in t.values.windows(2) {
            prop_assert!(w[1] > w[0]);
            prop_assert_eq!(w[1], w[0] + w[0].min(nu) / 2.0);
            prop_assert_eq!(w[1], chi(w[0], nu));
        }
        prop_assert!(*t.values.last().unwrap() >= target);
    }
}

#[test]
fn audit_ignores_draw_order() {
    let sys = build(&ModelConfig::Split2d { b: 2, law: SplitLaw::Uniform, c_const: None }).unwrap();
    let config = AuditConfig { n_draws: 5000, ..Default::default() };
    let mut draws = collect_draw_stats(&sys, 0, 5000, config.c7_point, &SeedTree::new(2)).unwrap();
    let a = audit_draws(&draws, &config).unwrap();
    draws.reverse();
    let mut rng = SeedTree::new(3).stream(Purpose::Misc, 0, 0);
    for i in (1..draws.len()).rev() {
        draws.swap(i, rng.random_range(0..=i));
    }
    let b = audit_draws(&draws, &config).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn zoo_models_pass_the_basic_conditions() {
    let config = AuditConfig::default();
    let seeds = SeedTree::new(8);
    for name in ["quicksort", "quicksort2d", "rrt", "urn_det", "urn_rand", "urn_multi", "split", "split2d"] {
        let sys = build(&ModelConfig::default_for(name).unwrap()).unwrap();
        for r in 0..sys.m() {
            let rep = audit_coefficients(&sys, r, &config, &seeds).unwrap();
            for key in ["A1", "A2", "A3", "A5"] {
                assert_eq!(rep.verdict(key), Some(Verdict::Pass), "{name} r={r} {key}: {:?}", rep.entries[key]);
            }
            if rep.verdict("A2") == Some(Verdict::Pass) {
                assert_eq!(rep.entries["C6"].estimate, Some(0.0), "{name}");
            }
            match name {
                "quicksort" | "rrt" => {
                    assert!(rep.a_hat >= 0.5 && rep.a_hat < 0.5 + 1e-3, "{name} a_hat {}", rep.a_hat);
                    assert!((rep.lambda_hat.unwrap() - 2.0).abs() < 0.2 && (rep.nu_hat.unwrap() - 1.0).abs() < 0.1);
                }
                "split" => assert!(rep.a_hat >= 0.5),
                _ => {}
            }
        }
    }
}

#[test]
fn dirichlet_split_respects_one_over_b() {
    let sys = build(&ModelConfig::Split { b: 3, law: SplitLaw::Dirichlet { alpha: 1.0 } }).unwrap();
    let rep = audit_coefficients(&sys, 0, &AuditConfig::default(), &SeedTree::new(1)).unwrap();
    assert!(rep.a_hat >= 1.0 / 3.0 - 1e-12);
}

#[test]
fn perpetuity_fails_a2() {
    let sys = build(
        &ModelConfig::from_json(
            r#"{"model": "custom", "d": 1,
                "equations": [{"index_map": [0], "outcomes": [{"prob": 1.0, "matrices": [[[1.0]]], "shift": [0.0]}]}]}"#,
        )
        .unwrap(),
    )
    .unwrap();
    let rep = audit_coefficients(&sys, 0, &AuditConfig::default(), &SeedTree::new(1)).unwrap();
    assert_eq!(rep.verdict("A2"), Some(Verdict::Fail));
    assert_eq!(rep.verdict("C6"), Some(Verdict::Fail));
}

fn affine(pool: &SamplePool, m: [f64; 4], shift: [f64; 2]) -> SamplePool {
    let v = pool
        .values()
        .chunks_exact(2)
        .flat_map(|x| [m[0] * x[0] + m[1] * x[1] + shift[0], m[2] * x[0] + m[3] * x[1] + shift[1]])
        .collect();
    SamplePool::new(2, v, 0, SeedLineage::root(0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn support_verdict_is_affine_invariant(
        theta in -3.0f64..3.0,
        phi in -3.0f64..3.0,
        log_s1 in 0.0f64..1.5,
        log_s2 in -1.5f64..0.0,
        shift in prop::array::uniform2(-100.0f64..100.0),
    ) {
        // U diag(s1, s2) V^T with condition number s1 / s2 <= 10^3
        let (s1, s2) = (10f64.powf(log_s1), 10f64.powf(log_s2));
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let m = [
            ct * s1 * cp + (-st) * s2 * (-sp),
            ct * s1 * sp + (-st) * s2 * cp,
            st * s1 * cp + ct * s2 * (-sp),
            st * s1 * sp + ct * s2 * cp,
        ];
        let mut rng = SeedTree::new(6).stream(Purpose::Misc, 0, 0);
        let cloud: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let cloud = SamplePool::new(2, cloud, 0, SeedLineage::root(0)).unwrap();
        let line: Vec<f64> = (0..2000).flat_map(|i| { let t = i as f64 / 2000.0; [t, 2.0 * t] }).collect();
        let line = SamplePool::new(2, line, 0, SeedLineage::root(0)).unwrap();
        for pool in [cloud, line] {
            let before = audit_support(&pool).verdict;
            let after = audit_support(&affine(&pool, m, shift)).verdict;
            prop_assert_eq!(before, after);
        }
    }
}
