use advsal_core::dualnorm::{Groups, PerturbRule, WeightVariant};
use advsal_core::gradnet::{parse_arch, Network};
use advsal_core::rng::{self, normal};
use advsal_core::tensor::norm_l2;
use advsal_core::trainloop::{iterate_perturbation, train, Dataset, PerturbRecord, Protocol, TrainConfig};
use advsal_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

/// Two Gaussian classes in `[1, 3, 3]` images, separated along the first pixel.
fn toy(seed: u64, n: usize) -> Dataset {
    let mut r = rng::rng_from_seed(seed);
    let (mut inputs, mut labels) = (Vec::new(), Vec::new());
    for i in 0..n {
        let y = i % 2;
        let mut v: Vec<f64> = (0..9).map(|_| 0.5 + 0.1 * normal(&mut r)).collect();
        v[0] += if y == 0 { -0.4 } else { 0.4 };
        inputs.push(Tensor::new(vec![1, 3, 3], v).unwrap());
        labels.push(y);
    }
    Dataset::new(inputs, labels).unwrap()
}

fn net(seed: u64) -> Network {
    Network::init(&[1, 3, 3], &parse_arch("flatten-dense:6-softplus-dense:2").unwrap(), 2, seed).unwrap()
}

fn cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 0.1,
        seed,
        ..TrainConfig::default()
    }
}

fn with(seed: u64, protocol: Protocol, rule: Option<PerturbRule>) -> TrainConfig {
    TrainConfig {
        protocol,
        rule,
        ..cfg(seed)
    }
}

fn run(seed: u64, c: &TrainConfig) -> Vec<f64> {
    train(net(seed), &toy(seed, 32), None, c, None).unwrap().0.params_flat()
}

fn records(seed: u64, c: &TrainConfig) -> Vec<PerturbRecord> {
    let mut out = Vec::new();
    let mut obs = |r: &PerturbRecord| out.push(r.clone());
    train(net(seed), &toy(seed, 32), None, c, Some(&mut obs)).unwrap();
    out
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    norm_l2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_coefficients_reduce_to_standard(seed in 0u64..1000) {
        let standard = run(seed, &cfg(seed));
        for rule in [
            PerturbRule::linf(0.0).unwrap(),
            PerturbRule::group(0.0, Groups::singletons(9)).unwrap(),
            PerturbRule::elastic_net(0.0, 0.0).unwrap(),
        ] {
            prop_assert_eq!(&run(seed, &with(seed, Protocol::Fast, Some(rule))), &standard);
        }
        let noise = TrainConfig { noise_sigma: 0.0, ..with(seed, Protocol::Noise, None) };
        prop_assert_eq!(&run(seed, &noise), &standard);
    }

    #[test]
    fn linf_perturbations_are_signs(seed in 0u64..1000, eps in 0.001f64..0.2) {
        for r in records(seed, &with(seed, Protocol::Fast, Some(PerturbRule::linf(eps).unwrap()))) {
            prop_assert!(r.deltas[0].iter().all(|&d| d == eps || d == -eps || d == 0.0));
        }
    }

    #[test]
    fn group_perturbations_have_norm_eps_or_zero(seed in 0u64..1000, eps in 0.001f64..0.2) {
        let groups = Groups::new(vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]], 9).unwrap();
        for r in records(seed, &with(seed, Protocol::Fast, Some(PerturbRule::group(eps, groups.clone()).unwrap()))) {
            for set in groups.sets() {
                let n = norm_l2(&set.iter().map(|&i| r.deltas[0][i]).collect::<Vec<_>>());
                prop_assert!(n == 0.0 || (n - eps).abs() <= 1e-12, "group norm {n}");
            }
        }
    }

    #[test]
    fn zero_iterations_equal_fast(seed in 0u64..1000, eps in 0.001f64..0.2) {
        for rule in [PerturbRule::linf(eps).unwrap(), PerturbRule::elastic_net(eps, eps).unwrap()] {
            let fast = run(seed, &with(seed, Protocol::Fast, Some(rule.clone())));
            let iterative = TrainConfig { iter_steps: 0, ..with(seed, Protocol::Iterative, Some(rule)) };
            prop_assert_eq!(&run(seed, &iterative), &fast);
        }
    }

    #[test]
    fn linf_iterates_stay_in_box(seed in 0u64..1000, eps in 0.001f64..0.2, step in 0.001f64..0.5) {
        let c = TrainConfig {
            iter_steps: 4,
            iter_step_size: step,
            epochs: 1,
            ..with(seed, Protocol::Iterative, Some(PerturbRule::linf(eps).unwrap()))
        };
        for r in records(seed, &c) {
            prop_assert_eq!(r.deltas.len(), 5);
            prop_assert!(r.deltas.iter().flatten().all(|d| d.abs() <= eps));
        }
    }

    #[test]
    fn seeded_runs_are_deterministic(seed in 0u64..1000) {
        let c = with(seed, Protocol::Fast, Some(PerturbRule::elastic_net(0.05, 0.05).unwrap()));
        prop_assert_eq!(run(seed, &c), run(seed, &c));
    }
}

// Ranges keep the analytic start inside the perturbation cap.
proptest! {
    #[test]
    fn penalized_ascent_is_monotone_on_a_quadratic(
        a in prop::collection::vec(-1.0f64..1.0, 1..7),
        curvature in 0.0f64..4.0,
        eps1 in 0.0f64..0.3,
        eps2 in 0.01f64..0.3,
        weighted in any::<bool>(),
    ) {
        let d = a.len();
        let (rule, penalty_lipschitz) = if weighted {
            let w: Vec<f64> = (0..d).map(|i| 0.5 + i as f64 / d as f64).collect();
            let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
            (PerturbRule::weighted(eps2, w, WeightVariant::DualValid).unwrap(), 1.0 / (2.0 * eps2 * min))
        } else {
            (PerturbRule::elastic_net(eps1, eps2).unwrap(), 1.0 / (2.0 * eps2))
        };
        let loss = |delta: &[f64]| -> f64 {
            a.iter().zip(delta).map(|(ai, di)| ai * di - 0.5 * curvature * di * di).sum()
        };
        let step = 1.0 / (curvature + penalty_lipschitz);
        let trace = iterate_perturbation(&rule, &a, 20, step, |delta| {
            Ok(a.iter().zip(delta).map(|(ai, di)| ai - curvature * di).collect())
        })
        .unwrap();
        let objective: Vec<f64> = trace.deltas.iter().map(|dl| loss(dl) - rule.penalty(dl).unwrap()).collect();
        for w in objective.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12, "{objective:?}");
        }
    }
}

#[test]
fn noise_has_configured_std() {
    let sigma = 0.2;
    let c = TrainConfig {
        noise_sigma: sigma,
        epochs: 12,
        ..with(5, Protocol::Noise, None)
    };
    let mut draws = Vec::new();
    let mut obs = |r: &PerturbRecord| draws.extend_from_slice(&r.deltas[0]);
    train(net(5), &toy(5, 1000), None, &c, Some(&mut obs)).unwrap();
    assert!(draws.len() >= 100_000);
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std - sigma).abs() <= 0.05 * sigma, "std {std}");
}

#[test]
fn fast_training_is_continuous_in_eps() {
    let standard = run(11, &cfg(11));
    let dist = |eps: f64| distance(&run(11, &with(11, Protocol::Fast, Some(PerturbRule::linf(eps).unwrap()))), &standard);
    let (d3, d4) = (dist(1e-3), dist(1e-4));
    assert!(d4 < d3 && d3 > 0.0, "{d3} {d4}");
}

#[test]
fn separable_toy_is_learned_within_fifty_epochs() {
    let mut r = rng::rng_from_seed(9);
    let (mut inputs, mut labels) = (Vec::new(), Vec::new());
    for _ in 0..60 {
        let (x, y): (f64, f64) = (r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        if (x + 0.5 * y).abs() < 0.15 {
            continue;
        }
        inputs.push(Tensor::vector(vec![x, y]));
        labels.push(usize::from(x + 0.5 * y > 0.0));
    }
    let data = Dataset::new(inputs, labels).unwrap();
    let net = Network::init(&[2], &parse_arch("dense:8-softplus-dense:2").unwrap(), 2, 2).unwrap();
    let c = TrainConfig {
        epochs: 50,
        batch_size: 8,
        learning_rate: 0.5,
        ..TrainConfig::default()
    };
    let (_, report) = train(net, &data, None, &c, None).unwrap();
    let acc = report.epoch_accuracy.iter().cloned().fold(0.0, f64::max);
    assert_eq!(acc, 1.0, "{:?}", report.epoch_accuracy);
}
