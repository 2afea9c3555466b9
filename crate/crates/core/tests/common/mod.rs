//! Random small networks and inputs shared by the integration tests.

#![allow(dead_code)]

use advsal_core::gradnet::{parse_arch, Network};
use advsal_core::rng;
use advsal_core::Tensor;
use rand::Rng;

/// A random dense or convolutional network with randomized parameters,
/// a random input in `[0, 1]` and a random label.
pub fn random_net(seed: u64, softplus_only: bool) -> (Network, Tensor, usize) {
    let mut r = rng::stream(seed, "test-net");
    let c = r.gen_range(1..=2);
    let h = r.gen_range(3..=6);
    let w = r.gen_range(3..=6);
    let classes = r.gen_range(2..=4);
    let act = |r: &mut rng::SeedRng| if softplus_only || r.gen_bool(0.5) { "softplus" } else { "relu" };
    let arch = if r.gen_bool(0.5) {
        format!("flatten-dense:{}-{}-dense:{classes}", r.gen_range(2..=8), act(&mut r))
    } else {
        format!(
            "conv:{}:{}:1:same-{}-flatten-dense:{classes}",
            r.gen_range(1..=3),
            r.gen_range(1..=3),
            act(&mut r)
        )
    };
    let mut net = Network::init(&[c, h, w], &parse_arch(&arch).unwrap(), classes, seed).unwrap();
    let params: Vec<f64> = (0..net.param_count()).map(|_| r.gen_range(-0.8..0.8)).collect();
    net.set_params_flat(&params).unwrap();
    let x = Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
    (net, x, r.gen_range(0..classes))
}
