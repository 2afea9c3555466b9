mod common;

use advsal_core::dualnorm::{
    make_patch_groups, taylor_gap, Groups, NetworkLoss, PerturbRule, WeightVariant,
};
use advsal_core::Tensor;
use proptest::prelude::*;

fn pairs(d: usize) -> Groups {
    Groups::new((0..d).step_by(2).map(|i| (i..(i + 2).min(d)).collect()).collect(), d).unwrap()
}

fn rules(d: usize, eps: f64) -> Vec<PerturbRule> {
    vec![
        PerturbRule::linf(eps).unwrap(),
        PerturbRule::group(eps, pairs(d)).unwrap(),
        PerturbRule::elastic_net(eps, 0.5 * eps).unwrap(),
        PerturbRule::weighted(eps, (0..d).map(|i| 0.5 + i as f64 / d as f64).collect(), WeightVariant::DualValid)
            .unwrap(),
    ]
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #[test]
    fn maximizer_attains_conjugate(g in prop::collection::vec(-3.0f64..3.0, 1..9), eps in 0.01f64..1.0) {
        for rule in rules(g.len(), eps) {
            let d = rule.argmax_perturb(&g).unwrap();
            let value = dot(&d, &g) - rule.penalty(&d).unwrap();
            prop_assert!((value - rule.conj_value(&g).unwrap()).abs() <= 1e-10, "{}", rule.name());
        }
    }

    #[test]
    fn fenchel_young_inequality(
        g in prop::collection::vec(-3.0f64..3.0, 4),
        delta in prop::collection::vec(-1.0f64..1.0, 4),
        eps in 0.01f64..1.0,
    ) {
        for rule in rules(4, eps) {
            let h = rule.penalty(&delta).unwrap();
            if h.is_finite() {
                prop_assert!(dot(&delta, &g) - h <= rule.conj_value(&g).unwrap() + 1e-12, "{}", rule.name());
            }
        }
    }

    #[test]
    fn conjugate_scaling(g in prop::collection::vec(-3.0f64..3.0, 1..9), c in 0.01f64..10.0, eps in 0.01f64..1.0) {
        let scaled: Vec<f64> = g.iter().map(|v| c * v).collect();
        for rule in [PerturbRule::linf(eps).unwrap(), PerturbRule::group(eps, pairs(g.len())).unwrap()] {
            let (a, b) = (rule.conj_value(&scaled).unwrap(), c * rule.conj_value(&g).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let l1: f64 = g.iter().map(|v| v.abs()).sum();
        let l2sq: f64 = g.iter().map(|v| v * v).sum();
        let en = PerturbRule::elastic_net(eps, 0.3).unwrap();
        let expected = c * eps * l1 + c * c * 0.3 * l2sq;
        prop_assert!((en.conj_value(&scaled).unwrap() - expected).abs() <= 1e-10 * (1.0 + expected));
    }

    #[test]
    fn projection_is_idempotent_and_non_expansive(
        a in prop::collection::vec(-2.0f64..2.0, 6),
        b in prop::collection::vec(-2.0f64..2.0, 6),
        eps in 0.01f64..1.0,
    ) {
        for rule in [PerturbRule::linf(eps).unwrap(), PerturbRule::group(eps, pairs(6)).unwrap()] {
            let (pa, pb) = (rule.project(&a).unwrap(), rule.project(&b).unwrap());
            prop_assert_eq!(rule.project(&pa).unwrap(), pa.clone());
            prop_assert_eq!(rule.penalty(&pa).unwrap(), 0.0);
            let diff = |x: &[f64], y: &[f64]| norm(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>());
            prop_assert!(diff(&pa, &pb) <= diff(&a, &b) + 1e-12);
        }
    }

    #[test]
    fn patch_groups_are_a_disjoint_cover(h in 1usize..9, w in 1usize..9, c in 1usize..4, patch in 1usize..5) {
        let groups = make_patch_groups(h, w, c, patch).unwrap();
        let mut seen = vec![0u8; h * w * c];
        for s in groups.sets() {
            for &i in s {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ball_perturbation_loss_is_bounded_below(seed in 0u64..10_000, eps in 0.001f64..0.1) {
        let (net, x, y) = common::random_net(seed, true);
        let loss = NetworkLoss { net: &net, label: y };
        let (l0, _, g) = net.loss_input_grad(&x, y).unwrap();
        let d = x.len();
        for rule in [
            PerturbRule::linf(eps).unwrap(),
            PerturbRule::group(eps, Groups::singletons(d)).unwrap(),
            PerturbRule::elastic_net(eps, eps).unwrap(),
        ] {
            let delta = Tensor::new(x.shape().to_vec(), rule.argmax_perturb(g.data()).unwrap()).unwrap();
            let t = taylor_gap(&loss, &x, &delta).unwrap();
            prop_assert!(t.holds());
            let l1 = net.loss(&x.add(&delta).unwrap(), y).unwrap();
            prop_assert!(l1 >= l0 - t.bound, "{}: {l1} < {l0} - {}", rule.name(), t.bound);
        }
    }
}
