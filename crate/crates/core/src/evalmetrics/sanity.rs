use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradnet::{Network, OutputMode};
use crate::rng::derive_seed;
use crate::saliency::{simple_grad, simple_grad_with};
use crate::tensor::Tensor;
use crate::trainloop::{predict_all, Dataset};

use super::mean;
use super::similarity::ssim;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeStep {
    /// Number of parameterized layers re-initialized so far.
    pub randomized: usize,
    /// Index of the layer re-initialized at this step.
    pub layer: Option<usize>,
    /// SSIM between the current and the original simple-gradient map.
    pub ssim: f64,
}

/// Re-initializes parameterized layers one at a time from the output toward
/// the input; layer `i` draws from `derive_seed(seed, i)`. Entry 0 is the
/// untouched network.
pub fn cascading_randomization(net: &Network, x: &Tensor, c: usize, seed: u64) -> Result<Vec<CascadeStep>> {
    let original = simple_grad(net, x, c)?.values;
    let mut steps = vec![CascadeStep {
        randomized: 0,
        layer: None,
        ssim: ssim(&original, &original)?,
    }];
    let mut cur = net.clone();
    let layers: Vec<usize> = (0..net.layers().len()).rev().filter(|&i| net.layers()[i].has_params()).collect();
    for (n, &i) in layers.iter().enumerate() {
        cur.reinit_layer(i, derive_seed(seed, i as u64))?;
        let map = simple_grad(&cur, x, c)?.values;
        steps.push(CascadeStep {
            randomized: n + 1,
            layer: Some(i),
            ssim: ssim(&original, &map)?,
        });
    }
    Ok(steps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SanityThresholds {
    /// Accuracy within this absolute margin above chance counts as chance level.
    pub chance_margin: f64,
    /// Saliency norm ratio (randomized / reference) below which maps count as vanishing.
    pub norm_ratio: f64,
    /// Mean SSIM to reference maps below which maps count as structureless.
    pub ssim: f64,
}

impl Default for SanityThresholds {
    fn default() -> Self {
        Self {
            chance_margin: 0.1,
            norm_ratio: 0.5,
            ssim: 0.5,
        }
    }
}

/// Outcome of the label-randomization check.
#[derive(Debug, Clone, PartialEq)]
pub struct SanityReport {
    pub accuracy: f64,
    pub chance: f64,
    pub at_chance: bool,
    /// Mean logit-gradient L2 norm of the randomized model over that of the reference.
    pub norm_ratio: f64,
    /// Mean SSIM between randomized-model and reference-model maps.
    pub mean_ssim: f64,
    /// Share of test inputs assigned the most frequent predicted class.
    pub constant_prediction_rate: f64,
    pub degenerate: bool,
}

/// Compares a model trained on permuted labels against a reference model
/// trained on true labels, on held-out data with true labels.
pub fn label_sanity(
    randomized: &Network,
    reference: &Network,
    test: &Dataset,
    thresholds: &SanityThresholds,
) -> Result<SanityReport> {
    if test.is_empty() {
        return Err(Error::invalid("sanity check needs test samples"));
    }
    let classes = randomized.class_count();
    let preds = predict_all(randomized, &test.inputs)?;
    let accuracy = preds.iter().zip(&test.labels).filter(|(p, y)| p == y).count() as f64 / test.len() as f64;
    let mut counts = vec![0usize; classes];
    preds.iter().for_each(|&p| counts[p] += 1);
    let constant_prediction_rate = *counts.iter().max().expect("classes >= 1") as f64 / test.len() as f64;
    let per: Vec<(f64, f64, f64)> = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let x = &test.inputs[i];
            let y = test.labels[i];
            let nr = simple_grad_with(randomized, x, y, OutputMode::Logit)?.raw.norm_l2();
            let nf = simple_grad_with(reference, x, y, OutputMode::Logit)?.raw.norm_l2();
            let s = ssim(&simple_grad(randomized, x, y)?.values, &simple_grad(reference, x, y)?.values)?;
            Ok((nr, nf, s))
        })
        .collect::<Result<_>>()?;
    let nr = mean(&per.iter().map(|p| p.0).collect::<Vec<_>>());
    let nf = mean(&per.iter().map(|p| p.1).collect::<Vec<_>>());
    let norm_ratio = if nf > 0.0 { nr / nf } else { 0.0 };
    let mean_ssim = mean(&per.iter().map(|p| p.2).collect::<Vec<_>>());
    let chance = 1.0 / classes as f64;
    Ok(SanityReport {
        accuracy,
        chance,
        at_chance: accuracy <= chance + thresholds.chance_margin,
        norm_ratio,
        mean_ssim,
        constant_prediction_rate,
        degenerate: norm_ratio < thresholds.norm_ratio || mean_ssim < thresholds.ssim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradnet::parse_arch;

    #[test]
    fn cascade_starts_at_one_and_is_reproducible() {
        let net = Network::init(&[1, 4, 4], &parse_arch("flatten-dense:6-softplus-dense:3").unwrap(), 3, 2).unwrap();
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
        let a = cascading_randomization(&net, &x, 1, 11).unwrap();
        assert_eq!(a.len(), 3);
        assert!((a[0].ssim - 1.0).abs() < 1e-12);
        assert_eq!(a[1].layer, Some(3));
        assert_eq!(a[2].layer, Some(1));
        assert_eq!(a, cascading_randomization(&net, &x, 1, 11).unwrap());
    }

    #[test]
    fn identical_models_are_not_degenerate() {
        let net = Network::init(&[1, 4, 4], &parse_arch("flatten-dense:6-softplus-dense:2").unwrap(), 2, 2).unwrap();
        let inputs: Vec<Tensor> = (0..6)
            .map(|s| Tensor::new(vec![1, 4, 4], (0..16).map(|i| ((i * (s + 1)) as f64).cos()).collect()).unwrap())
            .collect();
        let data = Dataset::new(inputs, vec![0, 1, 0, 1, 0, 1]).unwrap();
        let r = label_sanity(&net, &net, &data, &SanityThresholds::default()).unwrap();
        assert!((r.norm_ratio - 1.0).abs() < 1e-12);
        assert!((r.mean_ssim - 1.0).abs() < 1e-9);
        assert!(!r.degenerate);
    }
}
