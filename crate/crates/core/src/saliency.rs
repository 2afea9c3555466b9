//! Gradient saliency maps, SmoothGrad, sparsification, and
//! optimization-based feature visualization.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradnet::{Network, OutputMode};
use crate::rng::{self, derive_seed, normal, rng_from_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SimpleGrad,
    SmoothGrad,
    Sparsified,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SimpleGrad => "simple_grad",
            Method::SmoothGrad => "smooth_grad",
            Method::Sparsified => "sparsified",
        }
    }
}

/// A channel-reduced attribution map and its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// `[H, W]` for image inputs, the input shape otherwise.
    pub values: Tensor,
    /// Signed gradient in the input's shape, before channel reduction.
    pub raw: Tensor,
    pub method: Method,
    pub target: usize,
    pub mode: OutputMode,
    /// [`Network::fingerprint`] of the source network.
    pub network: u64,
}

/// Sum of absolute values over the channel axis of a `[C, H, W]` tensor;
/// other ranks are reduced elementwise to absolute values.
pub fn reduce_channels(t: &Tensor) -> Tensor {
    match *t.shape() {
        [c, h, w] => {
            let mut out = vec![0.0; h * w];
            for ch in 0..c {
                for (o, v) in out.iter_mut().zip(&t.data()[ch * h * w..(ch + 1) * h * w]) {
                    *o += v.abs();
                }
            }
            Tensor::new(vec![h, w], out).expect("spatial shape")
        }
        _ => t.map(f64::abs),
    }
}

/// Simple-gradient map of the post-softmax probability of class `c`.
pub fn simple_grad(net: &Network, x: &Tensor, c: usize) -> Result<SaliencyMap> {
    simple_grad_with(net, x, c, OutputMode::Probability)
}

pub fn simple_grad_with(net: &Network, x: &Tensor, c: usize, mode: OutputMode) -> Result<SaliencyMap> {
    let raw = net.input_saliency(x, c, mode)?;
    Ok(SaliencyMap {
        values: reduce_channels(&raw),
        raw,
        method: Method::SimpleGrad,
        target: c,
        mode,
        network: net.fingerprint(),
    })
}

/// Mean of simple-gradient maps over `n` Gaussian-perturbed copies of `x`.
/// Copy `i` draws its noise from `derive_seed(seed, i)`.
pub fn smooth_grad(net: &Network, x: &Tensor, c: usize, n: usize, sigma: f64, seed: u64) -> Result<SaliencyMap> {
    if n == 0 {
        return Err(Error::invalid("smooth_grad needs at least one sample"));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::invalid("noise std must be finite and >= 0"));
    }
    if sigma == 0.0 {
        return Ok(SaliencyMap {
            method: Method::SmoothGrad,
            ..simple_grad(net, x, c)?
        });
    }
    let maps: Vec<SaliencyMap> = (0..n)
        .into_par_iter()
        .map(|i| simple_grad(net, &smoothgrad_input(x, sigma, seed, i), c))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; maps[0].values.len()];
    let mut raw = vec![0.0; x.len()];
    for m in &maps {
        values.iter_mut().zip(m.values.data()).for_each(|(a, b)| *a += b);
        raw.iter_mut().zip(m.raw.data()).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / n as f64;
    Ok(SaliencyMap {
        values: Tensor::new(maps[0].values.shape().to_vec(), values)?.scale(inv),
        raw: Tensor::new(x.shape().to_vec(), raw)?.scale(inv),
        method: Method::SmoothGrad,
        target: c,
        mode: OutputMode::Probability,
        network: net.fingerprint(),
    })
}

/// The `i`-th noisy copy used by [`smooth_grad`].
pub fn smoothgrad_input(x: &Tensor, sigma: f64, seed: u64, i: usize) -> Tensor {
    let mut rng = rng_from_seed(derive_seed(seed, i as u64));
    let data = x.data().iter().map(|v| v + sigma * normal(&mut rng)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Indices of the `k` largest-magnitude entries; ties go to the lowest index.
pub fn top_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `ceil(fraction * n)`, robust to representation error in `fraction * n`.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Keeps the `ceil(keep_fraction * d)` largest-magnitude entries and zeroes the rest.
pub fn sparsify(map: &SaliencyMap, keep_fraction: f64) -> Result<SaliencyMap> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!("keep fraction must be in (0, 1], got {keep_fraction}")));
    }
    let v = map.values.data();
    let mut out = vec![0.0; v.len()];
    for i in top_indices(v, fraction_count(keep_fraction, v.len())) {
        out[i] = v[i];
    }
    Ok(SaliencyMap {
        values: Tensor::new(map.values.shape().to_vec(), out)?,
        method: Method::Sparsified,
        ..map.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVisConfig {
    pub steps: usize,
    pub step_size: f64,
    pub decay: f64,
    pub seed: u64,
    /// Valid pixel range enforced after every step.
    pub range: (f64, f64),
}

impl Default for FeatureVisConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 0.1,
            decay: 0.05,
            seed: 0,
            range: (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVis {
    pub image: Tensor,
    /// `logit_c(x) - decay ||x||^2` at the initial point and after every step.
    pub objective: Vec<f64>,
}

/// Projected gradient ascent on `logit_c(x) - decay ||x||^2` from a seeded
/// uniform-noise start around the middle of the pixel range.
pub fn feature_vis(net: &Network, c: usize, cfg: &FeatureVisConfig) -> Result<FeatureVis> {
    if cfg.steps == 0 {
        return Err(Error::invalid("feature visualization needs at least one step"));
    }
    let (lo, hi) = cfg.range;
    if !(lo < hi) || !cfg.decay.is_finite() || cfg.decay < 0.0 || !(cfg.step_size > 0.0) {
        return Err(Error::invalid("invalid feature visualization parameters"));
    }
    net.check_class(c)?;
    let mut rng = rng::stream(cfg.seed, "featvis");
    let mid = 0.5 * (lo + hi);
    let spread = 0.05 * (hi - lo);
    let n: usize = net.input_shape().iter().product();
    let init = (0..n).map(|_| mid + rng.gen_range(-spread..spread)).collect();
    let mut x = Tensor::new(net.input_shape().to_vec(), init)?;
    let objective_at = |x: &Tensor| -> Result<f64> {
        let (logits, _) = net.forward(x)?;
        Ok(logits.data()[c] - cfg.decay * x.data().iter().map(|v| v * v).sum::<f64>())
    };
    let mut objective = vec![objective_at(&x)?];
    for _ in 0..cfg.steps {
        let g = net.input_saliency(&x, c, OutputMode::Logit)?;
        x = x.zip_map(&g, |xi, gi| (xi + cfg.step_size * (gi - 2.0 * cfg.decay * xi)).clamp(lo, hi))?;
        objective.push(objective_at(&x)?);
    }
    Ok(FeatureVis { image: x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradnet::{Dense, Layer};

    fn linear(w: Vec<f64>, classes: usize) -> Network {
        let d = w.len() / classes;
        let layer = Layer::Dense(Dense {
            weights: Tensor::new(vec![classes, d], w).unwrap(),
            bias: Tensor::zeros(&[classes]),
        });
        Network::new(vec![d], vec![layer], classes).unwrap()
    }

    fn map_of(values: Vec<f64>) -> SaliencyMap {
        let n = values.len();
        SaliencyMap {
            values: Tensor::vector(values),
            raw: Tensor::zeros(&[n]),
            method: Method::SimpleGrad,
            target: 0,
            mode: OutputMode::Logit,
            network: 0,
        }
    }

    #[test]
    fn linear_logit_map_is_abs_weight_row() {
        let net = linear(vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0], 2);
        let x = Tensor::vector(vec![0.2, 0.1, -0.3]);
        let m = simple_grad_with(&net, &x, 0, OutputMode::Logit).unwrap();
        assert_eq!(m.values.data(), &[1.0, 2.0, 0.5]);
        assert_eq!(m.raw.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_output_gives_zero_map() {
        let net = linear(vec![0.0; 6], 2);
        let m = simple_grad(&net, &Tensor::vector(vec![1.0, 2.0, 3.0]), 1).unwrap();
        assert!(m.values.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn channel_reduction_sums_magnitudes() {
        let t = Tensor::new(vec![2, 1, 2], vec![1.0, -2.0, -3.0, 4.0]).unwrap();
        let r = reduce_channels(&t);
        assert_eq!(r.shape(), &[1, 2]);
        assert_eq!(r.data(), &[4.0, 6.0]);
    }

    #[test]
    fn sparsify_examples() {
        let m = map_of(vec![3.0, 1.0, 2.0]);
        assert_eq!(sparsify(&m, 1.0 / 3.0).unwrap().values.data(), &[3.0, 0.0, 0.0]);
        assert_eq!(sparsify(&m, 1.0).unwrap().values, m.values);
        let once = sparsify(&m, 0.5).unwrap();
        assert_eq!(once.values.data(), &[3.0, 0.0, 2.0]);
        assert_eq!(sparsify(&once, 0.5).unwrap().values, once.values);
        assert!(sparsify(&m, 0.0).is_err());
        let ties = map_of(vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(sparsify(&ties, 0.5).unwrap().values.data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn fraction_counts() {
        assert_eq!(fraction_count(0.1, 30), 3);
        assert_eq!(fraction_count(1.0 / 3.0, 3), 1);
        assert_eq!(fraction_count(0.4, 5), 2);
        assert_eq!(fraction_count(0.41, 5), 3);
        assert_eq!(fraction_count(1.0, 7), 7);
    }

    #[test]
    fn smooth_grad_degenerate_cases() {
        let net = Network::init(
            &[3],
            &crate::gradnet::parse_arch("dense:4-softplus-dense:2").unwrap(),
            2,
            5,
        )
        .unwrap();
        let x = Tensor::vector(vec![0.1, -0.4, 0.7]);
        let sg = simple_grad(&net, &x, 1).unwrap();
        for n in [1, 3, 8] {
            assert_eq!(smooth_grad(&net, &x, 1, n, 0.0, 9).unwrap().values, sg.values);
        }
        let one = smooth_grad(&net, &x, 1, 1, 0.2, 9).unwrap();
        let at = simple_grad(&net, &smoothgrad_input(&x, 0.2, 9, 0), 1).unwrap();
        assert_eq!(one.values, at.values);
        assert!(smooth_grad(&net, &x, 1, 0, 0.1, 9).is_err());
    }

    #[test]
    fn feature_vis_linear_model_closed_form() {
        // w / (2 decay) = (0.25, 2.5, -0.5) clipped to [0, 1].
        let net = linear(vec![0.05, 0.5, -0.1, 0.0, 0.0, 0.0], 2);
        let cfg = FeatureVisConfig {
            steps: 400,
            step_size: 0.5,
            decay: 0.1,
            seed: 1,
            range: (0.0, 1.0),
        };
        let fv = feature_vis(&net, 0, &cfg).unwrap();
        let expect = [0.25, 1.0, 0.0];
        for (a, b) in fv.image.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!(fv.objective.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(feature_vis(&net, 0, &FeatureVisConfig { steps: 0, ..cfg }).is_err());
    }
}
