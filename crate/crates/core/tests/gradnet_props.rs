mod common;

use advsal_core::formats::{network_from_bytes, network_to_bytes};
use advsal_core::gradnet::{cross_entropy, finite_difference_check, softmax};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backprop_matches_central_differences(seed in 0u64..10_000) {
        let (net, x, y) = common::random_net(seed, false);
        let check = finite_difference_check(&net, &x, y, 1e-6, 1e-4).unwrap();
        prop_assert!(check.max_error() <= 1e-5, "seed {seed}: {check:?}");
    }

    #[test]
    fn softmax_is_shift_invariant(
        logits in prop::collection::vec(-20.0f64..20.0, 1..8),
        shift in -50.0f64..50.0,
    ) {
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let (p, q) = (softmax(&logits), softmax(&shifted));
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let y = logits.len() - 1;
        prop_assert!((cross_entropy(&logits, y) - cross_entropy(&shifted, y)).abs() <= 1e-9);
    }

    #[test]
    fn network_bytes_round_trip(seed in 0u64..10_000) {
        let (net, x, _) = common::random_net(seed, false);
        let back = network_from_bytes(&network_to_bytes(&net)).unwrap();
        prop_assert_eq!(back.params_flat(), net.params_flat());
        prop_assert_eq!(back.forward(&x).unwrap().0, net.forward(&x).unwrap().0);
    }
}
